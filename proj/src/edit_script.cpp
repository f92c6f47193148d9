#include "exposure/edit_script.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "exposure/error.hpp"

namespace exposure {

using json = nlohmann::ordered_json;

namespace {

json resolved_json(const FilterAction& a) {
    const auto& p = a.resolved;
    json r = json::object();
    switch (a.kind) {
        case FilterKind::Exposure:
            r["exposure_stops"] = p[0];
            break;
        case FilterKind::Gamma:
            r["gamma"] = p[0];
            break;
        case FilterKind::WhiteBalance:
            r["W_r"] = p[0];
            r["W_g"] = p[1];
            r["W_b"] = p[2];
            break;
        case FilterKind::Saturation:
        case FilterKind::Contrast:
        case FilterKind::BlackWhite:
            r["strength"] = p[0];
            break;
        case FilterKind::Tone:
            r["segments"] = p;
            break;
        case FilterKind::Color: {
            const auto begin = p.begin();
            r["red"] = std::vector<double>(begin, begin + kCurveSegments);
            r["green"] = std::vector<double>(begin + kCurveSegments, begin + 2 * kCurveSegments);
            r["blue"] = std::vector<double>(begin + 2 * kCurveSegments, begin + 3 * kCurveSegments);
            break;
        }
    }
    return r;
}

}  // namespace

LinearImage EditScript::apply(const LinearImage& image) const {
    LinearImage out = image;
    for (const auto& step : steps) out = apply_filter(step.action, out);
    return out;
}

std::string EditScript::to_json() const {
    json doc = json::array();
    for (const auto& step : steps) {
        json s;
        s["filter"] = std::string(filter_name(step.action.kind));
        s["raw"] = step.action.raw;
        s["resolved"] = resolved_json(step.action);
        s["display"] = step.action.display();
        if (step.probabilities) {
            json probs = json::object();
            for (int k = 0; k < kFilterCount; ++k)
                probs[std::string(filter_name(static_cast<FilterKind>(k)))] = (*step.probabilities)[k];
            s["probabilities"] = probs;
        }
        doc.push_back(std::move(s));
    }
    return doc.dump(2) + "\n";
}

EditScript EditScript::from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed edit script: ") + e.what());
    }
    if (!doc.is_array()) throw DataError("edit script must be a JSON array");
    EditScript script;
    for (const auto& s : doc) {
        if (!s.is_object() || !s.contains("filter") || !s.contains("raw"))
            throw DataError("edit script step needs \"filter\" and \"raw\"");
        const auto kind = parse_filter_name(s["filter"].get<std::string>());
        if (!kind) throw DataError("unknown filter in edit script: " + s["filter"].get<std::string>());
        std::vector<double> raw;
        try {
            raw = s["raw"].get<std::vector<double>>();
        } catch (const json::exception&) {
            throw DataError("edit script \"raw\" must be an array of numbers");
        }
        if (static_cast<int>(raw.size()) != arity(*kind)) throw DataError("edit script raw arity mismatch");
        EditStep step{FilterAction::make(*kind, std::move(raw)), std::nullopt};
        if (s.contains("probabilities")) {
            std::array<double, kFilterCount> probs{};
            for (int k = 0; k < kFilterCount; ++k)
                probs[k] = s["probabilities"].value(std::string(filter_name(static_cast<FilterKind>(k))), 0.0);
            step.probabilities = probs;
        }
        script.steps.push_back(std::move(step));
    }
    return script;
}

void EditScript::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write edit script " + path.string());
    out << to_json();
}

EditScript EditScript::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open edit script " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

}  // namespace exposure

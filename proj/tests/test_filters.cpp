#include <doctest.h>

#include <cmath>

#include "exposure/edit_script.hpp"
#include "exposure/error.hpp"
#include "exposure/filters.hpp"
#include "test_support.hpp"

using namespace exposure;
using exposure::testing::random_image;
using exposure::testing::random_vector;
using exposure::testing::relative_error;

namespace {

LinearImage solid(int w, int h, const Pixel& p) {
    LinearImage img(w, h);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) img.set_pixel(i, p);
    return img;
}

FilterAction random_action(FilterKind kind, Rng& rng, double bound = 0.9) {
    return FilterAction::make(kind, random_vector(static_cast<std::size_t>(arity(kind)), rng, -bound, bound));
}

double distance_to_grid(double x, double step) {
    const double r = std::fmod(x, step);
    return std::min(r, step - r);
}

// True when the pixel sits close to a point where the filter is not smooth
// (curve breakpoints, the |0.5 - v| kink, max/min ties).
bool near_kink(FilterKind kind, const Pixel& p, double eps) {
    switch (kind) {
        case FilterKind::Tone:
        case FilterKind::Color:
            for (double v : p)
                if (distance_to_grid(v, 1.0 / kCurveSegments) < eps) return true;
            return false;
        case FilterKind::Saturation: {
            const double hi = std::max({p[0], p[1], p[2]});
            const double lo = std::min({p[0], p[1], p[2]});
            if (std::abs(hi - 0.5) < eps || hi - lo < 0.05) return true;
            return std::abs(p[0] - p[1]) < eps || std::abs(p[1] - p[2]) < eps || std::abs(p[0] - p[2]) < eps;
        }
        default:
            return false;
    }
}

}  // namespace

TEST_CASE("arity and names") {
    const int expected[] = {1, 1, 3, 1, 8, 1, 1, 24};
    for (int i = 0; i < kFilterCount; ++i) {
        CHECK(arity(kAllFilters[i]) == expected[i]);
        CHECK(parse_filter_name(filter_name(kAllFilters[i])) == kAllFilters[i]);
    }
    CHECK_FALSE(parse_filter_name("Level").has_value());
    CHECK_THROWS_AS(FilterAction::make(FilterKind::WhiteBalance, {0.1}), UsageError);
    CHECK_THROWS_AS(map_raw_params(FilterKind::Tone, std::vector<double>(3, 0.0)), UsageError);
}

TEST_CASE("map_raw_params examples") {
    CHECK(map_raw_params(FilterKind::Exposure, std::vector{0.0})[0] == 0.0);
    const auto e = FilterAction::make(FilterKind::Exposure, {0.614});
    CHECK(e.resolved[0] == doctest::Approx(2.149));
    CHECK(e.display() == "Exposure +2.15");

    const auto g = FilterAction::make(FilterKind::Gamma, {-0.2377});
    CHECK(g.resolved[0] == doctest::Approx(0.77).epsilon(1e-3));
    CHECK(g.display() == "Gamma 1/0.77");
    CHECK(FilterAction::make(FilterKind::Gamma, {0.631}).display() == "Gamma 2.00");

    CHECK(FilterAction::make(FilterKind::Contrast, {-0.59}).display() == "Contrast -0.59");

    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto tone = random_action(FilterKind::Tone, rng, 0.999);
        for (double t : tone.resolved) {
            CHECK(t >= 0.5);
            CHECK(t <= 2.0);
        }
        const auto color = random_action(FilterKind::Color, rng, 0.999);
        for (double t : color.resolved) {
            CHECK(t >= std::exp(-0.1));
            CHECK(t <= std::exp(0.1));
        }
        const auto wb = random_action(FilterKind::WhiteBalance, rng, 0.999);
        for (double w : wb.resolved) {
            CHECK(w >= 0.5);
            CHECK(w <= 2.0);
        }
    }
}

TEST_CASE("apply_filter examples") {
    const auto quarter = solid(1, 1, {0.25, 0.25, 0.25});
    auto expo = FilterAction::make(FilterKind::Exposure, {1.0 / 3.5});
    CHECK(expo.resolved[0] == doctest::Approx(1.0));
    const auto brighter = apply_filter(expo, quarter);
    for (double v : brighter.data()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

    const auto bw = apply_filter(FilterAction::make(FilterKind::BlackWhite, {1.0}), solid(1, 1, {1, 0, 0}));
    for (double v : bw.data()) CHECK(v == doctest::Approx(0.27).epsilon(1e-12));

    Rng rng(8);
    const auto img = random_image(7, 5, rng);
    CHECK(apply_filter(FilterAction::make(FilterKind::Contrast, {0.0}), img) == img);
    CHECK(apply_filter(FilterAction::make(FilterKind::WhiteBalance, {0.0, 0.0, 0.0}), img) == img);
}

TEST_CASE("neutral parameters are the identity") {
    Rng rng(12);
    for (FilterKind kind : kAllFilters) {
        CAPTURE(filter_name(kind));
        const auto img = random_image(9, 9, rng);
        const auto out = apply_filter(FilterAction::neutral(kind), img);
        for (std::size_t i = 0; i < img.data().size(); ++i) CHECK(std::abs(out.data()[i] - img.data()[i]) < 1e-6);
    }
}

TEST_CASE("resolution independence") {
    Rng rng(31);
    for (FilterKind kind : kAllFilters) {
        CAPTURE(filter_name(kind));
        const auto action = random_action(kind, rng);
        const Pixel probe{rng.uniform(), rng.uniform(), rng.uniform()};
        auto small = random_image(64, 64, rng);
        auto large = random_image(512, 512, rng);
        small.set_pixel(100, probe);
        large.set_pixel(200000, probe);
        const auto a = apply_filter(action, small).pixel(100);
        const auto b = apply_filter(action, large).pixel(200000);
        for (int c = 0; c < 3; ++c) CHECK(a[c] == b[c]);
    }
    for (FilterKind kind : {FilterKind::Exposure, FilterKind::WhiteBalance}) {
        const auto action = random_action(kind, rng);
        const auto big = random_image(128, 128, rng);
        const auto x = downsample(apply_filter(action, big), 64);
        const auto y = apply_filter(action, downsample(big, 64));
        for (std::size_t i = 0; i < x.data().size(); ++i) CHECK(x.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("outputs stay finite") {
    Rng rng(77);
    for (FilterKind kind : kAllFilters) {
        for (int trial = 0; trial < 50; ++trial) {
            auto img = random_image(4, 4, rng);
            img.at(0, 0, 0) = 0.0;
            img.at(1, 0, 1) = 1.0;
            img.set_pixel(5, {0, 0, 0});
            img.set_pixel(6, {1, 1, 1});
            CHECK(apply_filter(random_action(kind, rng, 0.9999), img).all_finite());
        }
    }
}

TEST_CASE("curve_eval") {
    const std::vector<double> uniform(8, 1.7);
    for (int i = 0; i <= 1000; ++i) {
        const double x = i / 1000.0;
        CHECK(std::abs(curve_eval(uniform, x) - x) < 1e-9);
    }
    const std::vector<double> two{1.0, 3.0};
    CHECK(curve_eval(two, 0.25) == doctest::Approx(0.125));
    CHECK(curve_eval(two, 0.75) == doctest::Approx(0.625));
    CHECK(Curve(two)(0.75) == doctest::Approx(0.625));

    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> t(8);
        for (auto& v : t) v = rng.uniform(0.01, 5.0);
        double total = 0, half = 0;
        for (int l = 0; l < 8; ++l) {
            total += t[l];
            if (l < 4) half += t[l];
        }
        CHECK(curve_eval(t, 0.0) == 0.0);
        CHECK(curve_eval(t, 1.0) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(curve_eval(t, 0.5) == doctest::Approx(half / total).epsilon(1e-14));
        double prev = -1.0;
        for (int i = 0; i <= 200; ++i) {
            double x1 = rng.uniform(), x2 = rng.uniform();
            if (x1 > x2) std::swap(x1, x2);
            CHECK(curve_eval(t, x1) <= curve_eval(t, x2));
            const double f = curve_eval(t, i / 200.0);
            CHECK(f >= prev);
            prev = f;
        }
    }
}

TEST_CASE("filter_vjp examples") {
    const auto quarter = solid(1, 1, {0.25, 0.25, 0.25});
    const std::vector<double> ones(3, 1.0);
    const auto g = filter_vjp(FilterAction::neutral(FilterKind::Exposure), quarter, ones);
    // three channels of 0.25 ln2 * 3.5
    CHECK(g.grad_raw[0] == doctest::Approx(1.8195113489698562).epsilon(1e-12));
    const auto fd = exposure::testing::central_difference(
        [&](const std::vector<double>& raw) {
            const auto out = apply_filter(FilterAction::make(FilterKind::Exposure, raw), quarter);
            return out.data()[0] + out.data()[1] + out.data()[2];
        },
        {0.0}, 0);
    CHECK(relative_error(g.grad_raw[0], fd) < 1e-6);

    const auto wb = FilterAction::make(FilterKind::WhiteBalance, {1.0, 0.0, 0.0});
    CHECK(wb.resolved[0] == doctest::Approx(2.0));
    Rng rng(2);
    const auto img = random_image(3, 3, rng);
    const auto up = random_vector(img.data().size(), rng);
    const auto gw = filter_vjp(wb, img, up);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        CHECK(gw.grad_input[3 * i] == doctest::Approx(2.0 * up[3 * i]));
        CHECK(gw.grad_input[3 * i + 1] == doctest::Approx(up[3 * i + 1]));
    }
    CHECK_THROWS_AS(filter_vjp(wb, img, std::vector<double>(5, 0.0)), UsageError);
}

TEST_CASE("filter_vjp matches central finite differences") {
    Rng rng(2024);
    const double h = 1e-5;
    for (FilterKind kind : kAllFilters) {
        CAPTURE(filter_name(kind));
        int checked = 0;
        double worst_raw = 0.0, worst_input = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const auto action = random_action(kind, rng);
            LinearImage img(3, 2);
            for (std::size_t i = 0; i < img.pixel_count(); ++i) {
                Pixel p;
                do {
                    p = {rng.uniform(0.02, 0.98), rng.uniform(0.02, 0.98), rng.uniform(0.02, 0.98)};
                } while (near_kink(kind, p, 1e-3));
                img.set_pixel(i, p);
            }
            const auto up = random_vector(img.data().size(), rng);
            const auto g = filter_vjp(action, img, up);

            const auto loss_raw = [&](const std::vector<double>& raw) {
                return exposure::testing::dot(up, apply_filter(FilterAction::make(kind, raw), img).data());
            };
            for (std::size_t i = 0; i < action.raw.size(); ++i) {
                const double num = exposure::testing::central_difference(loss_raw, action.raw, i, h);
                worst_raw = std::max(worst_raw, relative_error(g.grad_raw[i], num, 1e-4));
            }
            const auto loss_input = [&](const std::vector<double>& x) {
                return exposure::testing::dot(up, apply_filter(action, LinearImage(3, 2, x)).data());
            };
            for (std::size_t k = 0; k < img.data().size(); ++k) {
                const double num = exposure::testing::central_difference(loss_input, std::vector<double>(img.data().begin(), img.data().end()), k, h);
                worst_input = std::max(worst_input, relative_error(g.grad_input[k], num, 1e-4));
            }
            ++checked;
        }
        CHECK(checked == 100);
        CHECK(worst_raw < 1e-4);
        CHECK(worst_input < 1e-4);
    }
}

TEST_CASE("filter_vjp near kinks stays within the looser bound") {
    Rng rng(515);
    const double h = 1e-5;
    for (FilterKind kind : {FilterKind::Tone, FilterKind::Color, FilterKind::Saturation}) {
        CAPTURE(filter_name(kind));
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const auto action = random_action(kind, rng);
            // Land between 2h and 1e-3 away from a breakpoint so the stencil does not straddle it.
            const double offset = rng.uniform(2 * h, 1e-3) * (rng.bernoulli(0.5) ? 1 : -1);
            Pixel p;
            if (kind == FilterKind::Saturation) {
                p = {0.5 + offset, rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)};
                if (std::abs(p[1] - p[2]) < 1e-3) continue;
            } else {
                p = {(1 + rng.index(7)) / 8.0 + offset, rng.uniform(0.02, 0.98), rng.uniform(0.02, 0.98)};
            }
            const LinearImage img(1, 1, std::vector<double>(p.begin(), p.end()));
            const auto up = random_vector(3, rng);
            const auto g = filter_vjp(action, img, up);
            for (std::size_t k = 0; k < 3; ++k) {
                const double num = exposure::testing::central_difference(
                    [&](const std::vector<double>& x) {
                        return exposure::testing::dot(up, apply_filter(action, LinearImage(1, 1, x)).data());
                    },
                    std::vector<double>(img.data().begin(), img.data().end()), k, h);
                worst = std::max(worst, relative_error(g.grad_input[k], num, 1e-4));
            }
        }
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("edit script JSON round trip") {
    Rng rng(9);
    EditScript script;
    for (FilterKind kind : kAllFilters) script.steps.push_back({random_action(kind, rng), std::nullopt});
    std::array<double, kFilterCount> probs{};
    probs.fill(0.125);
    script.steps[0].probabilities = probs;

    const auto text = script.to_json();
    CHECK(text.find("\"filter\"") < text.find("\"raw\""));
    CHECK(text.find("\"raw\"") < text.find("\"resolved\""));
    CHECK(text.find("\"resolved\"") < text.find("\"display\""));
    const auto back = EditScript::from_json(text);
    REQUIRE(back.steps.size() == script.steps.size());
    const auto img = random_image(6, 6, rng, 0.02, 0.98);
    CHECK(back.apply(img) == script.apply(img));
    CHECK(back.steps[0].probabilities.has_value());
    CHECK_FALSE(back.steps[1].probabilities.has_value());
    CHECK_THROWS_AS(EditScript::from_json("{not json"), DataError);
    CHECK_THROWS_AS(EditScript::from_json(R"([{"filter": "Level", "raw": [0]}])"), DataError);
}

#include "exposure/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "exposure/agent.hpp"
#include "exposure/distill.hpp"
#include "exposure/error.hpp"
#include "exposure/evaluator.hpp"
#include "exposure/trainer.hpp"

namespace exposure {

namespace {

struct Flags {
    std::string config, raw, target, out, ckpt, in, script, replay, outputs, targets, before, after, metrics;
    bool sample = false;
    std::int64_t seed = 0;
    int steps = 2;
    int iterations = 400;
};

AgentState start_state(const LinearImage& full, int side) {
    AgentState s = AgentState::start(full.width() == side && full.height() == side ? full : downsample(full, side));
    s.full_image = full;
    return s;
}

int cmd_train(const Flags& f, std::ostream& out, bool seed_given) {
    auto config = TrainerConfig::load(f.config);
    if (seed_given) config.seed = static_cast<std::uint64_t>(f.seed);
    auto raws = load_proxies(f.raw, config.image_side);
    auto targets = load_proxies(f.target, config.image_side);
    std::ofstream metrics;
    TrainOutputs outputs;
    outputs.checkpoint = f.out;
    if (!f.metrics.empty()) {
        metrics.open(f.metrics);
        if (!metrics) throw DataError("cannot write metrics log " + f.metrics);
        outputs.metrics = &metrics;
    }
    outputs.progress = &out;
    train(config, std::move(raws), std::move(targets), outputs);
    out << "checkpoint written to " << f.out << "\n";
    return kExitOk;
}

int cmd_apply(const Flags& f, std::ostream& out) {
    const auto full = load_image(f.in);
    EditScript script;
    if (!f.replay.empty()) {
        script = EditScript::load(f.replay);
    } else {
        if (f.ckpt.empty()) throw UsageError("apply needs --ckpt or --replay");
        const Actor actor = Actor::from_checkpoint(nn::Checkpoint::load(f.ckpt));
        Rng rng(static_cast<std::uint64_t>(f.seed));
        EpisodeOptions opts;
        opts.sample = f.sample;
        script = run_episode(actor, start_state(full, actor.config().side), rng, opts);
    }
    // The script is re-applied to the full-resolution image so that the
    // agent path and the replay path share one code path.
    save_image(script.apply(full), f.out);
    if (!f.script.empty()) script.save(f.script);
    for (const auto& step : script.steps) out << step.action.display() << "\n";
    return kExitOk;
}

int cmd_trace(const Flags& f, std::ostream& out) {
    const auto full = load_image(f.in);
    const Actor actor = Actor::from_checkpoint(nn::Checkpoint::load(f.ckpt));
    Rng rng(static_cast<std::uint64_t>(f.seed));
    EpisodeOptions opts;
    opts.sample = f.sample;
    const auto script = run_episode(actor, start_state(full, actor.config().side), rng, opts);
    char buf[128];
    for (std::size_t k = 0; k < script.steps.size(); ++k) {
        const auto& step = script.steps[k];
        out << "Step " << k + 1 << ": " << step.action.display() << "\n";
        const auto& probs = *step.probabilities;
        for (int i = 0; i < kFilterCount; ++i) {
            const int bar = static_cast<int>(std::lround(probs[i] * 40.0));
            std::snprintf(buf, sizeof buf, "  %-6s %.8f %s%s\n",
                          std::string(filter_short_name(static_cast<FilterKind>(i))).c_str(), probs[i],
                          std::string(static_cast<std::size_t>(bar), '#').c_str(),
                          i == index_of(step.action.kind) ? " <" : "");
            out << buf;
        }
    }
    return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out) {
    out << evaluate_dirs(f.outputs, f.targets, static_cast<std::uint64_t>(f.seed)).to_text();
    return kExitOk;
}

int cmd_distill(const Flags& f, std::ostream& out) {
    if (f.steps < 1) throw UsageError("--steps must be >= 1");
    std::vector<LinearImage> before, after;
    load_pairs(f.before, f.after, before, after);
    DistillOptions opts;
    opts.steps = f.steps;
    opts.iterations = f.iterations;
    opts.seed = static_cast<std::uint64_t>(f.seed);
    const auto result = distill(before, after, opts);
    result.script.save(f.out);
    for (const auto& step : result.script.steps) out << step.action.display() << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "residual %.3e\n", result.residual);
    out << buf;
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"White-box photo retouching with learned filter sequences", "exposure"};
    app.require_subcommand(1, 1);
    Flags f;

    CLI::Option* train_seed = nullptr;
    auto add_seed = [&](CLI::App* sub) { return sub->add_option("--seed", f.seed, "Random seed"); };

    auto* train = app.add_subcommand("train", "Train an agent on unpaired raw/target collections");
    train->add_option("--config", f.config, "Trainer config file")->required()->check(CLI::ExistingFile);
    train->add_option("--raw", f.raw, "Directory of input images")->required()->check(CLI::ExistingDirectory);
    train->add_option("--target", f.target, "Directory of target-style images")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", f.out, "Checkpoint path")->required();
    train->add_option("--metrics", f.metrics, "Per-iteration metrics log");
    train_seed = add_seed(train);

    auto* apply = app.add_subcommand("apply", "Retouch an image with a trained agent or a saved script");
    apply->add_option("--ckpt", f.ckpt, "Checkpoint")->check(CLI::ExistingFile);
    apply->add_option("--in", f.in, "Input image")->required()->check(CLI::ExistingFile);
    apply->add_option("--out", f.out, "Output image")->required();
    apply->add_option("--script", f.script, "Write the edit script JSON here");
    apply->add_option("--replay", f.replay, "Apply this edit script instead of running the agent")->check(CLI::ExistingFile);
    apply->add_flag("--sample", f.sample, "Sample filters instead of taking the most likely");
    add_seed(apply);

    auto* trace = app.add_subcommand("trace", "Print the agent's step-by-step decisions");
    trace->add_option("--ckpt", f.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    trace->add_option("--in", f.in, "Input image")->required()->check(CLI::ExistingFile);
    trace->add_flag("--sample", f.sample, "Sample filters instead of taking the most likely");
    add_seed(trace);

    auto* eval = app.add_subcommand("eval", "Histogram-intersection comparison of two image collections");
    eval->add_option("--outputs", f.outputs, "Directory of produced images")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--targets", f.targets, "Directory of target images")->required()->check(CLI::ExistingDirectory);
    add_seed(eval);

    auto* distill_cmd = app.add_subcommand("distill", "Recover an edit script imitating a black-box filter");
    distill_cmd->add_option("--before", f.before, "Images before the black-box filter")->required()->check(CLI::ExistingDirectory);
    distill_cmd->add_option("--after", f.after, "Same-named images after the filter")->required()->check(CLI::ExistingDirectory);
    distill_cmd->add_option("--steps", f.steps, "Number of operations")->required();
    distill_cmd->add_option("--out", f.out, "Edit script JSON output")->required();
    distill_cmd->add_option("--iterations", f.iterations, "Refinement iterations");
    add_seed(distill_cmd);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(f, out, train_seed->count() > 0);
        if (apply->parsed()) return cmd_apply(f, out);
        if (trace->parsed()) return cmd_trace(f, out);
        if (eval->parsed()) return cmd_eval(f, out);
        if (distill_cmd->parsed()) return cmd_distill(f, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace exposure

#include "isct/cli.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "isct/bench.hpp"
#include "isct/binary_io.hpp"
#include "isct/checkpoint.hpp"
#include "isct/config_io.hpp"
#include "isct/dataset.hpp"
#include "isct/error.hpp"
#include "isct/evaluate.hpp"
#include "isct/manifest.hpp"
#include "isct/maze.hpp"
#include "isct/train.hpp"
#include "isct/verify.hpp"

namespace isct {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool is_separator(char c) { return c == ',' || c == ';' || c == ' ' || c == '\t' || c == '\r'; }

// Splits a row on any run of separators; returns false if a field is not a
// finite number.
bool parse_row(std::string_view line, std::vector<double>& out) {
    out.clear();
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && is_separator(line[i])) ++i;
        if (i >= line.size()) break;
        std::size_t j = i;
        while (j < line.size() && !is_separator(line[j])) ++j;
        std::string_view field = line.substr(i, j - i);
        if (!field.empty() && field.front() == '+') field.remove_prefix(1);
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) return false;
        out.push_back(v);
        i = j;
    }
    return true;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

MazeSpec resolve_maze(const std::string& key) {
    if (key.find('/') != std::string::npos || fs::exists(key)) return load_maze_file(key);
    return builtin_maze(key);
}

StartMode parse_start_mode(const std::string& s) {
    if (s == "random") return StartMode::random;
    if (s == "fixed") return StartMode::fixed;
    throw ConfigError("unknown start mode '" + s + "' (expected random or fixed)");
}

fs::path output_or_default(const std::string& given, const std::string& fallback_name) {
    if (!given.empty()) return given;
    return default_output_dir() / fallback_name;
}

nlohmann::json argv_json(const std::vector<std::string>& args) {
    nlohmann::json a = nlohmann::json::array();
    for (std::size_t i = 1; i < args.size(); ++i) a.push_back(args[i]);
    return a;
}

struct SigArgs {
    std::string input;
    int depth = 2;
    bool strict = false;
    bool isc = false;
    std::string channels;
    std::string output;
};

int cmd_sig(const SigArgs& a, const std::vector<std::string>& args, std::ostream& out) {
    const auto text = read_file(a.input);
    const Path path = parse_path_text(text);
    if (a.depth < 0) throw InvalidArgument("--depth must be >= 0");
    std::string report;
    if (a.isc) {
        if (a.strict) throw InvalidArgument("--strict and --isc cannot be combined");
        const ChannelSpec channels = a.channels.empty() ? ChannelSpec::whole(path.dim()) : parse_channel_list(a.channels);
        channels.validate(path.dim());
        const auto records = isc_sequence(path, a.depth, channels);
        std::ostringstream s;
        s << "isc dim=" << path.dim() << " depth=" << a.depth << " steps=" << path.num_steps()
          << " groups=" << channels.num_groups() << "\n";
        for (std::size_t g = 0; g < channels.num_groups(); ++g) {
            const int gd = static_cast<int>(channels.groups[g].size());
            s << "group " << g << " coords";
            for (int c : channels.groups[g]) s << " " << c;
            s << "\nlevel\toffset\tsize\n";
            const TruncatedTensor shape(gd, a.depth);
            for (int k = 0; k <= a.depth; ++k) s << k << "\t" << shape.level_offset(k) << "\t" << shape.level_size(k) << "\n";
        }
        s << "step\tgroup\tvalues\n";
        for (const auto& rec : records) {
            for (std::size_t g = 0; g < rec.contributions.size(); ++g) {
                s << rec.step_index << "\t" << g;
                for (double v : rec.contributions[g].coefficients()) s << "\t" << fmt(v);
                s << "\n";
            }
        }
        report = s.str();
    } else if (a.strict) {
        report = format_signature(strict_iterated_sum(path, a.depth), "strict", path.num_steps());
    } else {
        report = format_signature(signature_batch(path, a.depth), "chen", path.num_steps());
    }
    out << report;
    if (!a.output.empty()) {
        write_file(a.output, report);
        RunManifest m;
        m.command = "sig";
        m.config = {{"argv", argv_json(args)}, {"depth", a.depth}, {"strict", a.strict}, {"isc", a.isc},
                    {"channels", a.channels}};
        m.add_input(a.input);
        m.add_output(a.output);
        write_manifest(m, a.output);
    }
    return kExitOk;
}

int cmd_verify(const std::string& suite, std::size_t trials, std::uint64_t seed, std::ostream& out) {
    std::vector<std::string> suites;
    if (suite == "all") {
        suites = verify_suite_names();
    } else {
        suites.push_back(suite);
    }
    bool ok = true;
    for (const auto& name : suites) {
        const auto r = run_verify_suite(name, trials, seed);
        out << r.suite << "\ttrials=" << r.trials << "\tfailures=" << r.failures << "\tworst=" << fmt(r.worst) << "\t"
            << (r.passed() ? "PASS" : "FAIL") << "\n";
        if (!r.passed()) {
            ok = false;
            out << "counterexample:\n" << r.counterexample << "\n";
        }
    }
    return ok ? kExitOk : kExitFailure;
}

int cmd_fit(int loops, int vertices, int depth, std::uint64_t seed, std::ostream& out) {
    if (loops < 1 || vertices < 3) throw InvalidArgument("fit needs --loops >= 1 and --vertices >= 3");
    Rng rng(seed);
    std::vector<Path> paths;
    std::vector<double> targets;
    for (int i = 0; i < loops; ++i) {
        paths.push_back(random_loop(rng, static_cast<std::size_t>(vertices)));
        targets.push_back(signed_area(paths.back()));
    }
    const auto rep = universal_fit(paths, targets, depth);
    out << "target\tsigned_area\nloops\t" << loops << "\ndepth\trmse\n";
    for (std::size_t m = 0; m < rep.rmse_by_depth.size(); ++m) out << m + 1 << "\t" << fmt(rep.rmse_by_depth[m]) << "\n";
    return kExitOk;
}

struct GenArgs {
    std::string maze = "u";
    int episodes = 200;
    double noise = 0.3;
    std::uint64_t seed = 0;
    bool delayed = false;
    double downgrade = 0.0;
    std::string start = "random";
    std::string output;
};

int cmd_gen_data(const GenArgs& a, const std::vector<std::string>& args, std::ostream& out) {
    const MazeSpec spec = resolve_maze(a.maze);
    CollectorConfig cc;
    cc.noise_sigma = a.noise;
    cc.start_mode = parse_start_mode(a.start);
    if (a.noise < 0 || !std::isfinite(a.noise)) throw InvalidArgument("--noise must be finite and >= 0");
    Dataset ds = collect_dataset(spec, cc, a.episodes, a.seed);
    if (a.delayed) ds = delayed_reward_variant(ds);
    if (a.downgrade > 0) ds = downgrade_dataset(ds, a.downgrade);
    const fs::path path = output_or_default(a.output, "dataset_" + spec.name + ".isd");
    save_dataset(ds, path);
    RunManifest m;
    m.command = "gen-data";
    m.seed = a.seed;
    m.config = {{"argv", argv_json(args)}, {"maze", spec.name},   {"episodes", a.episodes},
                {"collector", to_json(cc)}, {"delayed", a.delayed}, {"downgrade", a.downgrade}};
    m.add_output(path);
    write_manifest(m, path);
    std::size_t successes = 0;
    for (const auto& t : ds.trajectories()) successes += t.terminal ? 1 : 0;
    out << "wrote " << path.string() << "\ttrajectories=" << ds.size() << "\tsteps=" << ds.total_steps()
        << "\tgoal_reached=" << successes << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string data;
    std::string profile = "desk";
    std::string mode = "isc";
    std::string channel_mode = "concat";
    std::string channels;
    std::uint64_t seed = 0;
    int epochs = 0;
    int max_batches = -1;
    std::string output;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& args, std::ostream& out) {
    Profile p = make_profile(a.profile);
    p.tokenizer.mode = parse_token_mode(a.mode);
    p.tokenizer.channel_mode = parse_channel_token_mode(a.channel_mode);
    p.train.seed = a.seed;
    if (a.epochs > 0) p.train.epochs = a.epochs;
    if (a.max_batches >= 0) p.train.max_batches_per_epoch = a.max_batches;
    p.train.validate();
    const Dataset ds = load_dataset(a.data);
    p.tokenizer.channels = a.channels.empty() ? default_channels(ds.state_dim()) : parse_channel_list(a.channels);

    const auto trained = fit_model(ds, p.model, p.tokenizer, p.train, [&out](const EpochStats& e) {
        out << "epoch " << e.epoch << "\tloss=" << fmt(e.mean_loss) << "\tlr=" << fmt(e.learning_rate) << "\n";
    });

    const fs::path path = output_or_default(a.output, "model_" + a.mode + ".ckpt");
    fs::path loss_path = path;
    loss_path += ".loss.tsv";
    std::ostringstream loss;
    loss << "epoch\tmean_loss\tlearning_rate\tmean_grad_norm\tbatches\n";
    for (const auto& e : trained.result.history) {
        loss << e.epoch << "\t" << fmt(e.mean_loss) << "\t" << fmt(e.learning_rate) << "\t" << fmt(e.mean_grad_norm)
             << "\t" << e.batches << "\n";
    }
    write_file(loss_path, loss.str());
    if (trained.result.diverged) {
        throw NumericError("training diverged: " + trained.result.divergence_message +
                           " (loss history written to " + loss_path.string() + ")");
    }

    Checkpoint ckpt{trained.model, trained.tokenizer, trained.train, trained.result.params,
                    {{"profile", p.name}, {"dataset", ds.metadata()}}};
    save_checkpoint(ckpt, path);
    RunManifest m;
    m.command = "train";
    m.seed = a.seed;
    m.config = {{"argv", argv_json(args)},
                {"profile", p.name},
                {"model", to_json(trained.model)},
                {"tokenizer", to_json(trained.tokenizer)},
                {"train", to_json(trained.train)},
                {"layout_text", trained.model.layout.to_text()}};
    m.add_input(a.data);
    m.add_output(path);
    m.add_output(loss_path);
    write_manifest(m, path);
    out << "wrote " << path.string() << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string ckpt;
    std::string maze = "u";
    double goal = 1.0;
    int episodes = 50;
    std::uint64_t seed = 0;
    std::string start = "fixed";
    double jitter = 0.1;
    std::string output;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& args, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const MazeSpec spec = resolve_maze(a.maze);
    if (ckpt.model.state_dim != kMazeStateDim || ckpt.model.action_dim != kMazeActionDim) {
        throw ConfigError("checkpoint expects state_dim " + std::to_string(ckpt.model.state_dim) + " and action_dim " +
                          std::to_string(ckpt.model.action_dim) + ", the maze provides " +
                          std::to_string(kMazeStateDim) + " and " + std::to_string(kMazeActionDim));
    }
    if (a.episodes < 0) throw InvalidArgument("--episodes must be >= 0");
    EvalConfig ec;
    ec.episodes = a.episodes;
    ec.seed = a.seed;
    ec.start_mode = parse_start_mode(a.start);
    ec.start_jitter = a.jitter;
    const auto report = evaluate_model(ckpt.params, ckpt.model, ckpt.tokenizer, spec, a.goal, ec);

    const fs::path prefix = output_or_default(a.output, "eval_" + spec.name);
    fs::path report_path = prefix;
    report_path += ".report.tsv";
    fs::path curves_path = prefix;
    curves_path += ".curves.tsv";
    write_file(report_path, report.summary_tsv());
    write_file(curves_path, report.curves_tsv());
    RunManifest m;
    m.command = "eval";
    m.seed = a.seed;
    m.config = {{"argv", argv_json(args)}, {"maze", spec.name}, {"goal", a.goal}, {"eval", to_json(ec)}};
    m.add_input(a.ckpt);
    m.add_output(report_path);
    m.add_output(curves_path);
    write_manifest(m, report_path);
    out << report.summary_tsv();
    return kExitOk;
}

int cmd_bench(const BenchConfig& cfg, std::ostream& out) {
    const auto rep = run_bench(cfg);
    out << rep.to_tsv();
    out << "stream_flat_within_2x\t" << (rep.stream_flat() ? "PASS" : "FAIL") << "\n";
    out << "recompute_slope_positive\t" << (rep.recompute_grows() ? "PASS" : "FAIL") << "\n";
    return rep.stream_flat() && rep.recompute_grows() ? kExitOk : kExitFailure;
}

}  // namespace

Path parse_path_text(std::string_view text) {
    std::vector<double> flat;
    std::vector<double> row;
    int dim = 0;
    std::size_t line_no = 0;
    bool seen_row = false;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const bool numeric = parse_row(line, row);
        if (!numeric) {
            if (!seen_row) {
                seen_row = true;  // header
                continue;
            }
            throw ParseError("path file line " + std::to_string(line_no) + ": not a row of finite numbers");
        }
        seen_row = true;
        if (dim == 0) {
            dim = static_cast<int>(row.size());
        } else if (static_cast<int>(row.size()) != dim) {
            throw ParseError("path file line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                             " columns, found " + std::to_string(row.size()));
        }
        flat.insert(flat.end(), row.begin(), row.end());
    }
    if (dim == 0) throw ParseError("path file contains no points");
    return Path(dim, std::move(flat));
}

ChannelSpec parse_channel_list(std::string_view text) {
    ChannelSpec spec;
    while (true) {
        const auto semi = text.find(';');
        const std::string_view group = trim(text.substr(0, semi));
        std::vector<int> idx;
        std::size_t i = 0;
        while (i <= group.size()) {
            const auto comma = group.find(',', i);
            const std::string_view field = trim(group.substr(i, comma == std::string_view::npos ? comma : comma - i));
            int v = 0;
            const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
            if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
                throw ParseError("channel list: '" + std::string(field) + "' is not an index");
            }
            idx.push_back(v);
            if (comma == std::string_view::npos) break;
            i = comma + 1;
        }
        spec.groups.push_back(std::move(idx));
        if (semi == std::string_view::npos) break;
        text = text.substr(semi + 1);
    }
    return spec;
}

std::string format_signature(const TruncatedTensor& sig, std::string_view kind, std::size_t steps) {
    std::ostringstream s;
    s << "signature kind=" << kind << " dim=" << sig.dim() << " depth=" << sig.depth() << " steps=" << steps << "\n";
    s << "level\toffset\tsize\n";
    for (int k = 0; k <= sig.depth(); ++k) s << k << "\t" << sig.level_offset(k) << "\t" << sig.level_size(k) << "\n";
    for (int k = 0; k <= sig.depth(); ++k) {
        s << "level " << k << ":";
        for (double v : sig.level(k)) s << " " << fmt(v);
        s << "\n";
    }
    s << "flat:";
    for (double v : sig.coefficients()) s << " " << fmt(v);
    s << "\n";
    return s.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Incremental signature contributions toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolkitVersion));

    SigArgs sig;
    auto* sig_cmd = app.add_subcommand("sig", "Signature of a path file");
    sig_cmd->add_option("--input", sig.input, "Delimited text, one point per row")->required();
    sig_cmd->add_option("--depth", sig.depth, "Truncation depth")->capture_default_str();
    sig_cmd->add_flag("--strict", sig.strict, "Use the strictly ordered iterated sum");
    sig_cmd->add_flag("--isc", sig.isc, "Print per-step incremental contributions");
    sig_cmd->add_option("--channels", sig.channels, "Channel groups for --isc, e.g. 0,1;2,3");
    sig_cmd->add_option("--output", sig.output, "Also write the report to this file");

    std::string suite = "all";
    std::size_t trials = 500;
    std::uint64_t verify_seed = 0;
    auto* verify_cmd = app.add_subcommand("verify", "Randomized identity checks");
    verify_cmd->add_option("--suite", suite, "chen, stream, decay, reparam, fit or all")->capture_default_str();
    verify_cmd->add_option("--trials", trials)->capture_default_str();
    verify_cmd->add_option("--seed", verify_seed)->capture_default_str();

    int loops = 200;
    int vertices = 8;
    int fit_depth = 3;
    std::uint64_t fit_seed = 0;
    auto* fit_cmd = app.add_subcommand("fit", "Linear fit of loop area from signatures");
    fit_cmd->add_option("--loops", loops)->capture_default_str();
    fit_cmd->add_option("--vertices", vertices)->capture_default_str();
    fit_cmd->add_option("--depth", fit_depth)->capture_default_str();
    fit_cmd->add_option("--seed", fit_seed)->capture_default_str();

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Collect a maze dataset");
    gen_cmd->add_option("--maze", gen.maze, "u, m, l or a maze text file")->capture_default_str();
    gen_cmd->add_option("--episodes", gen.episodes)->capture_default_str();
    gen_cmd->add_option("--noise", gen.noise, "Action noise std")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
    gen_cmd->add_flag("--delayed", gen.delayed, "Move all reward to the last step");
    gen_cmd->add_option("--downgrade", gen.downgrade, "Drop this percent of best trajectories")->capture_default_str();
    gen_cmd->add_option("--start", gen.start, "random or fixed")->capture_default_str();
    gen_cmd->add_option("--output", gen.output);

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
    train_cmd->add_option("--data", tr.data)->required();
    train_cmd->add_option("--profile", tr.profile, "desk or paper")->capture_default_str();
    train_cmd->add_option("--mode", tr.mode, "isc, correlation or full_signature")->capture_default_str();
    train_cmd->add_option("--channel-mode", tr.channel_mode, "concat or per_channel")->capture_default_str();
    train_cmd->add_option("--channels", tr.channels, "Channel groups, e.g. 0,1;2,3");
    train_cmd->add_option("--seed", tr.seed)->capture_default_str();
    train_cmd->add_option("--epochs", tr.epochs, "Override the profile's epoch count");
    train_cmd->add_option("--max-batches", tr.max_batches, "Override batches per epoch (0 = all)");
    train_cmd->add_option("--output", tr.output);

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Roll out a checkpoint in a maze");
    eval_cmd->add_option("--ckpt", ev.ckpt)->required();
    eval_cmd->add_option("--maze", ev.maze, "u, m, l or a maze text file")->capture_default_str();
    eval_cmd->add_option("--goal", ev.goal, "Return-to-go target")->capture_default_str();
    eval_cmd->add_option("--episodes", ev.episodes)->capture_default_str();
    eval_cmd->add_option("--seed", ev.seed)->capture_default_str();
    eval_cmd->add_option("--start", ev.start, "random or fixed")->capture_default_str();
    eval_cmd->add_option("--jitter", ev.jitter, "Start position jitter")->capture_default_str();
    eval_cmd->add_option("--output", ev.output, "Prefix for the report and curve files");

    BenchConfig bc;
    auto* bench_cmd = app.add_subcommand("bench", "Streaming vs recomputation timing");
    bench_cmd->add_option("--dims", bc.dims)->capture_default_str();
    bench_cmd->add_option("--depth", bc.depth)->capture_default_str();
    bench_cmd->add_option("--steps", bc.steps)->capture_default_str();
    bench_cmd->add_option("--seed", bc.seed)->capture_default_str();
    bench_cmd->add_option("--repeats", bc.repeats)->capture_default_str();

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::Success& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (*sig_cmd) return cmd_sig(sig, args, out);
        if (*verify_cmd) return cmd_verify(suite, trials, verify_seed, out);
        if (*fit_cmd) return cmd_fit(loops, vertices, fit_depth, fit_seed, out);
        if (*gen_cmd) return cmd_gen_data(gen, args, out);
        if (*train_cmd) return cmd_train(tr, args, out);
        if (*eval_cmd) return cmd_eval(ev, args, out);
        if (*bench_cmd) return cmd_bench(bc, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidArgument& e) {
        err << "invalid argument: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ResourceLimitError& e) {
        err << "limit exceeded: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace isct

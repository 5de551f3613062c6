// ucas: train / shape-replay / eval / sweep / report
//
// Exit status: 0 ok, 1 replay check found mismatches, 2 usage or invalid
// configuration, 3 I/O, 4 malformed or invalid data, 5 numerical abort.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "ucas/ucas.hpp"

namespace fs = std::filesystem;
using namespace ucas;

namespace {

enum Exit { kOk = 0, kMismatch = 1, kUsage = 2, kIo = 3, kData = 4, kAbort = 5 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

fs::path output_root() {
    const char* env = std::getenv("UCAS_OUTPUT_ROOT");
    return env && *env ? fs::path(env) : fs::path("runs");
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// --- configuration flags -----------------------------------------------------

struct ConfigFlags {
    std::string config_file;
    KeyValues overrides;
};

void add_config_flags(CLI::App* app, ConfigFlags& flags) {
    app->add_option("--config", flags.config_file, "key = value configuration file; flags override it");
    for (const auto& key : config_keys()) {
        std::string names = "--" + key;
        std::string dashed = key;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        if (dashed != key) names += ",--" + dashed;
        if (key == "beta_penalty") names += ",--beta";
        if (key == "learning_rate") names += ",--lr";
        app->add_option_function<std::string>(
               names, [&flags, key](const std::string& v) { flags.overrides[key] = v; }, "config key " + key)
            ->group("Configuration");
    }
}

TrainConfig resolve_config(const ConfigFlags& flags, const KeyValues& forced = {}) {
    KeyValues kv;
    if (!flags.config_file.empty()) kv = read_config_file(flags.config_file);
    for (const auto& [k, v] : flags.overrides) kv[k] = v;
    for (const auto& [k, v] : forced) kv.try_emplace(k, v);
    if (!kv.count("task")) throw UsageError("no task given: pass --task modsum|sortdigits or --config FILE");
    try {
        return build_config(kv);
    } catch (const ValidationError& e) {
        throw UsageError(std::string("invalid configuration: ") + e.what());
    }
}

fs::path default_run_dir(const std::string& command, const TrainConfig& c) {
    return output_root() / (command + "-" + std::string(to_string(c.mode)) + "-" + std::string(to_string(c.task)) + "-seed" +
                            std::to_string(c.seed));
}

// --- train -------------------------------------------------------------------

struct TrainOptions {
    std::string out;
    int checkpoint_every = 0;
    int trace_every = 0;
    int log_every = 100;
};

struct RunSummary {
    int trained = 0;
    int skipped = 0;
    int budget_exhausted = 0;
};

RunSummary run_training(const TrainConfig& cfg, const fs::path& dir, const TrainOptions& opt, std::ostream* log,
                        std::mutex* log_mutex = nullptr) {
    ensure_dir(dir);
    write_config(cfg, dir / "config.txt");
    if (opt.checkpoint_every > 0) ensure_dir(dir / "checkpoints");
    if (opt.trace_every > 0) ensure_dir(dir / "traces");

    TrainState state(cfg);
    MetricsWriter metrics(dir / "metrics.csv");
    RunSummary sum;
    for (int s = 0; s < cfg.steps; ++s) {
        StepOutcome out;
        try {
            out = train_step(state, cfg);
        } catch (const NumericalAbort& e) {
            std::ofstream(dir / "abort.txt") << e.what() << '\n';
            write_checkpoint(state.params, dir / "abort.ckpt");
            throw;
        }
        const auto& m = out.metrics;
        metrics.append(m);
        sum.skipped += m.skipped ? 1 : 0;
        sum.trained += m.skipped ? 0 : 1;
        sum.budget_exhausted += m.budget_exhausted ? 1 : 0;
        const int done = s + 1;
        if (opt.trace_every > 0 && done % opt.trace_every == 0 && !out.groups.empty()) {
            std::vector<TraceRecord> recs;
            for (std::size_t i = 0; i < out.groups.size(); ++i) {
                TraceRecord r{out.groups[i], std::nullopt};
                if (i < out.shaped.size()) r.shaped = EmbeddedShape{cfg.shape_params(), out.shaped[i]};
                recs.push_back(std::move(r));
            }
            char name[32];
            std::snprintf(name, sizeof name, "step_%06d.jsonl", done);
            write_trace(recs, dir / "traces" / name);
        }
        if (opt.checkpoint_every > 0 && done % opt.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06d.ckpt", done);
            write_checkpoint(state.params, dir / "checkpoints" / name);
        }
        if (log && opt.log_every > 0 && done % opt.log_every == 0) {
            std::optional<std::lock_guard<std::mutex>> lock;
            if (log_mutex) lock.emplace(*log_mutex);
            *log << "step " << done << (m.skipped ? " (skipped)" : "") << "  reward " << fmt(m.mean_reward) << "  entropy "
                 << fmt(m.mean_entropy) << "  len " << fmt(m.mean_response_length, 2) << "  kept " << m.groups_kept << "/"
                 << m.groups_sampled << '\n';
        }
    }
    write_checkpoint(state.params, dir / "final.ckpt");
    return sum;
}

int cmd_train(const ConfigFlags& flags, const TrainOptions& opt) {
    const TrainConfig cfg = resolve_config(flags);
    const fs::path dir = opt.out.empty() ? default_run_dir("train", cfg) : fs::path(opt.out);
    std::cout << "output: " << dir.string() << '\n';
    write_config(cfg, std::cout);
    const auto sum = run_training(cfg, dir, opt, &std::cout);
    std::cout << "trained " << sum.trained << " steps, skipped " << sum.skipped;
    if (sum.budget_exhausted) std::cout << ", " << sum.budget_exhausted << " steps exhausted the resample budget";
    std::cout << "\nfinal checkpoint: " << (dir / "final.ckpt").string() << '\n';
    return kOk;
}

// --- shape-replay ------------------------------------------------------------

struct ReplayOptions {
    std::string trace;
    ShapeParams params;
    double tolerance = 1e-12;
    bool check = false;
    std::string out;
};

int cmd_replay(const ReplayOptions& opt) {
    const auto records = read_trace(fs::path(opt.trace));
    const auto results = replay_shape(records, opt.params, opt.tolerance);
    const fs::path dir = opt.out.empty() ? output_root() / "replay" : fs::path(opt.out);
    ensure_dir(dir);

    std::vector<TraceRecord> shaped;
    for (std::size_t i = 0; i < records.size(); ++i)
        shaped.push_back({records[i].group, EmbeddedShape{opt.params, results[i].shaped}});
    write_trace(shaped, dir / "shaped.jsonl");

    std::ofstream report(dir / "mismatches.csv");
    if (!report) throw IoError("cannot write " + (dir / "mismatches.csv").string());
    report << "group_id,field,expected,actual\n";
    std::size_t compared = 0, shown = 0;
    for (const auto& r : results) {
        compared += r.compared ? 1 : 0;
        for (const auto& m : r.mismatches) {
            report << m.group_id << ',' << m.field << ',' << detail::shortest(m.expected) << ','
                   << detail::shortest(m.actual) << '\n';
            if (shown++ < 20)
                std::cout << "group " << m.group_id << " " << m.field << ": expected " << detail::shortest(m.expected)
                          << " got " << detail::shortest(m.actual) << '\n';
        }
    }
    const std::size_t n = count_mismatches(results);
    std::cout << records.size() << " groups replayed, " << compared << " with embedded values\n";
    std::cout << n << " mismatches\n";
    return opt.check && n > 0 ? kMismatch : kOk;
}

// --- eval --------------------------------------------------------------------

struct EvalSetOptions {
    std::string task;
    std::string eval_set;
    std::size_t count = 200;
    std::uint64_t eval_seed = 20240601;
};

std::vector<TaskInstance> load_eval_set(const EvalSetOptions& o) {
    if (!o.eval_set.empty()) {
        auto set = read_eval_set(fs::path(o.eval_set));
        if (set.empty()) throw UsageError("eval set " + o.eval_set + " is empty");
        return set;
    }
    if (o.task.empty()) throw UsageError("pass --task or --eval-set");
    TaskKind kind;
    try {
        kind = parse_task_kind(o.task);
    } catch (const InvalidInput& e) {
        throw UsageError(e.what());
    }
    if (o.count == 0) throw UsageError("--count must be positive");
    return make_eval_set(kind, o.count, o.eval_seed);
}

struct EvalOptions {
    std::string checkpoint;
    EvalSetOptions set;
    std::vector<std::size_t> ks{1, 2, 4, 8, 16};
    double temperature = 1.0;
    int max_response_len = 24;
    std::uint64_t seed = 0;
    std::string out;
    std::string save_eval_set;
};

int cmd_eval(const EvalOptions& opt) {
    const auto params = read_checkpoint(fs::path(opt.checkpoint));
    const auto set = load_eval_set(opt.set);
    if (!opt.save_eval_set.empty()) write_eval_set(set, opt.save_eval_set);
    if (opt.temperature < 0.0) throw UsageError("--temperature must be >= 0");
    for (std::size_t k : opt.ks)
        if (k < 1) throw UsageError("--k values must be >= 1");
    Rng rng(opt.seed);
    const auto res = evaluate(params, set, opt.ks, opt.temperature, rng, opt.max_response_len);
    std::cout << "problems: " << set.size() << '\n';
    std::cout << "pass@1 (greedy): " << fmt(res.pass1_greedy) << '\n';
    for (const auto& p : res.pass_at_k) std::cout << "pass@" << p.k << ": " << fmt(p.rate) << '\n';
    if (!opt.out.empty()) {
        ensure_dir(opt.out);
        std::ofstream csv(fs::path(opt.out) / "eval.csv");
        if (!csv) throw IoError("cannot write eval.csv in " + opt.out);
        csv << "metric,value\npass1_greedy," << detail::shortest(res.pass1_greedy) << '\n';
        for (const auto& p : res.pass_at_k) csv << "pass@" << p.k << ',' << detail::shortest(p.rate) << '\n';
    }
    return kOk;
}

// --- sweep -------------------------------------------------------------------

struct SweepOptions {
    std::vector<double> alphas{0.0, 0.25};
    std::vector<double> betas{0.0, 0.01};
    std::vector<std::uint64_t> seeds{1, 2};
    int jobs = 1;
    std::string out;
    int tail = 100;
};

struct Cell {
    double alpha, beta;
    std::uint64_t seed;
    fs::path dir;
    TrainConfig cfg;
    RunSummary summary;
    std::string error;
};

double tail_mean(const std::vector<double>& v, int tail) {
    if (v.empty()) return std::nan("");
    const std::size_t n = std::min<std::size_t>(v.size(), static_cast<std::size_t>(tail));
    double s = 0.0;
    for (std::size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
    return s / static_cast<double>(n);
}

int cmd_sweep(const ConfigFlags& flags, const SweepOptions& opt) {
    const TrainConfig base = resolve_config(flags, {{"mode", "ucas"}});
    const fs::path root = opt.out.empty() ? output_root() / "sweep" : fs::path(opt.out);
    ensure_dir(root);
    write_config(base, root / "base_config.txt");

    std::vector<Cell> cells;
    for (double a : opt.alphas)
        for (double b : opt.betas)
            for (auto s : opt.seeds) {
                Cell c{a, b, s, {}, base, {}, {}};
                c.cfg.alpha = a;
                c.cfg.beta_penalty = b;
                c.cfg.seed = s;
                try {
                    c.cfg.validate();
                } catch (const ValidationError& e) {
                    throw UsageError(std::string("invalid sweep cell: ") + e.what());
                }
                c.dir = root / ("alpha" + detail::shortest(a) + "_beta" + detail::shortest(b) + "_seed" + std::to_string(s));
                cells.push_back(std::move(c));
            }

    std::atomic<std::size_t> next{0};
    std::mutex io;
    TrainOptions topt;
    topt.log_every = 0;
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            auto& c = cells[i];
            try {
                c.summary = run_training(c.cfg, c.dir, topt, nullptr);
            } catch (const std::exception& e) {
                c.error = e.what();
            }
            std::lock_guard<std::mutex> lock(io);
            std::cout << "cell " << c.dir.filename().string() << (c.error.empty() ? " done" : " FAILED: " + c.error) << '\n';
        }
    };
    const int jobs = std::max(1, std::min<int>(opt.jobs, static_cast<int>(cells.size())));
    std::vector<std::thread> pool;
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::ofstream summary(root / "summary.csv");
    if (!summary) throw IoError("cannot write summary.csv in " + root.string());
    summary << "alpha,beta,seed,steps_trained,steps_skipped,final_reward,final_entropy,final_resp_len,status\n";
    std::cout << "alpha    beta     seed  reward  entropy\n";
    bool failed = false;
    for (const auto& c : cells) {
        double r = std::nan(""), h = std::nan(""), l = std::nan("");
        if (c.error.empty()) {
            const auto t = read_metrics(c.dir / "metrics.csv");
            r = tail_mean(t.values.count("mean_reward") ? t.values.at("mean_reward") : std::vector<double>{}, opt.tail);
            h = tail_mean(t.values.count("gen_entropy") ? t.values.at("gen_entropy") : std::vector<double>{}, opt.tail);
            l = tail_mean(t.values.count("resp_len") ? t.values.at("resp_len") : std::vector<double>{}, opt.tail);
        }
        failed = failed || !c.error.empty();
        summary << detail::shortest(c.alpha) << ',' << detail::shortest(c.beta) << ',' << c.seed << ','
                << c.summary.trained << ',' << c.summary.skipped << ',' << detail::shortest(r) << ',' << detail::shortest(h)
                << ',' << detail::shortest(l) << ',' << (c.error.empty() ? "ok" : "failed") << '\n';
        char line[128];
        std::snprintf(line, sizeof line, "%-8s %-8s %-5llu %-7.4f %-7.4f\n", detail::shortest(c.alpha).c_str(),
                      detail::shortest(c.beta).c_str(), static_cast<unsigned long long>(c.seed), r, h);
        std::cout << line;
    }
    std::cout << "summary: " << (root / "summary.csv").string() << '\n';
    return failed ? kAbort : kOk;
}

// --- report ------------------------------------------------------------------

struct ReportOptions {
    std::vector<std::string> metrics;
    std::string before, after;
    EvalSetOptions set;
    int max_response_len = 24;
    std::string out;
};

void report_metrics(const ReportOptions& opt, const fs::path& dir) {
    std::vector<MetricsTable> tables;
    for (const auto& p : opt.metrics) tables.push_back(read_metrics(p));
    const auto& columns = tables.front().columns;
    for (const auto& t : tables)
        if (t.columns != columns) throw ValidationError("header", "metrics files have different columns");

    std::size_t rows = 0;
    for (const auto& col : columns) {
        // step -> values across files
        std::map<int, std::vector<double>> by_step;
        for (const auto& t : tables) {
            const auto& v = t.values.count(col) ? t.values.at(col) : std::vector<double>{};
            for (std::size_t i = 0; i < t.steps.size() && i < v.size(); ++i) by_step[t.steps[i]].push_back(v[i]);
        }
        std::ofstream out(dir / (col + ".csv"));
        if (!out) throw IoError("cannot write " + (dir / (col + ".csv")).string());
        out << "step,mean,std,n\n";
        for (const auto& [step, vals] : by_step) {
            out << step << ',' << detail::shortest(numerics::mean(vals)) << ','
                << detail::shortest(numerics::population_stddev(vals)) << ',' << vals.size() << '\n';
        }
        rows = by_step.size();
    }
    std::cout << tables.size() << " metrics files, " << columns.size() << " metrics, " << rows << " steps\n";
    std::cout << "summaries: " << dir.string() << "/<metric>.csv\n";
}

void report_confidence_shift(const ReportOptions& opt, const fs::path& dir) {
    const auto before = read_checkpoint(fs::path(opt.before));
    const auto after = read_checkpoint(fs::path(opt.after));
    const auto set = load_eval_set(opt.set);
    const auto rows = confidence_shift_report(before, after, set, opt.max_response_len);

    std::ofstream out(dir / "confidence_shift.csv");
    if (!out) throw IoError("cannot write confidence_shift.csv in " + dir.string());
    out << "problem,prompt,category,confidence_before,confidence_after,normalized_before,normalized_after\n";
    std::map<ShiftCategory, std::vector<double>> shift;
    for (const auto& r : rows) {
        out << r.problem << ',' << Vocabulary::decode(set[r.problem].prompt) << ',' << to_string(r.category) << ','
            << detail::shortest(r.confidence_before) << ',' << detail::shortest(r.confidence_after) << ','
            << detail::shortest(r.normalized_before) << ',' << detail::shortest(r.normalized_after) << '\n';
        shift[r.category].push_back(r.normalized_after - r.normalized_before);
    }
    std::cout << "category  count  mean normalized shift\n";
    for (auto c : {ShiftCategory::kept_correct, ShiftCategory::regressed, ShiftCategory::improved, ShiftCategory::kept_wrong}) {
        const auto it = shift.find(c);
        const std::size_t n = it == shift.end() ? 0 : it->second.size();
        char line[96];
        std::snprintf(line, sizeof line, "%-8s  %5zu  %s\n", std::string(to_string(c)).c_str(), n,
                      n ? fmt(numerics::mean(it->second)).c_str() : "-");
        std::cout << line;
    }
    std::cout << "rows: " << (dir / "confidence_shift.csv").string() << '\n';
}

int cmd_report(const ReportOptions& opt) {
    const bool shift = !opt.before.empty() || !opt.after.empty();
    if (opt.metrics.empty() && !shift) throw UsageError("report needs metrics files or --before/--after checkpoints");
    if (shift && (opt.before.empty() || opt.after.empty())) throw UsageError("--before and --after go together");
    const fs::path dir = opt.out.empty() ? output_root() / "report" : fs::path(opt.out);
    ensure_dir(dir);
    if (!opt.metrics.empty()) report_metrics(opt, dir);
    if (shift) report_confidence_shift(opt, dir);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Uncertainty-aware advantage shaping lab"};
    app.require_subcommand(1);

    ConfigFlags train_flags;
    TrainOptions train_opt;
    auto* train = app.add_subcommand("train", "train a policy and write metrics, checkpoints and traces");
    add_config_flags(train, train_flags);
    train->add_option("--out", train_opt.out, "output directory (default $UCAS_OUTPUT_ROOT/train-<mode>-<task>-seed<seed>)");
    train->add_option("--checkpoint-every", train_opt.checkpoint_every, "write checkpoints/step_N.ckpt every N steps");
    train->add_option("--trace-every", train_opt.trace_every, "write traces/step_N.jsonl every N steps");
    train->add_option("--log-every", train_opt.log_every, "progress line every N steps (0 = quiet)");

    ReplayOptions replay_opt;
    auto* replay = app.add_subcommand("shape-replay", "recompute shaped advantages from a trace");
    replay->add_option("trace", replay_opt.trace, "trace file (JSON lines)")->required();
    replay->add_option("--alpha", replay_opt.params.alpha, "shaping intensity");
    replay->add_option("--beta,--beta-penalty,--beta_penalty", replay_opt.params.beta, "token penalty strength");
    replay->add_option("--epsilon,--epsilon-std,--epsilon_std", replay_opt.params.epsilon, "standardization epsilon");
    replay->add_option("--tolerance", replay_opt.tolerance, "relative tolerance for embedded values");
    replay->add_flag("--check", replay_opt.check, "exit 1 when any embedded value disagrees");
    replay->add_option("--out", replay_opt.out, "output directory (default $UCAS_OUTPUT_ROOT/replay)");

    EvalOptions eval_opt;
    auto* eval = app.add_subcommand("eval", "greedy pass@1 and sampled pass@k of a checkpoint");
    eval->add_option("--checkpoint", eval_opt.checkpoint, "policy checkpoint")->required();
    eval->add_option("--task", eval_opt.set.task, "generate a held-out set for this task");
    eval->add_option("--eval-set", eval_opt.set.eval_set, "prompt<TAB>answer file");
    eval->add_option("--count", eval_opt.set.count, "generated set size");
    eval->add_option("--eval-seed", eval_opt.set.eval_seed, "generated set seed");
    eval->add_option("--save-eval-set", eval_opt.save_eval_set, "write the evaluated set to this file");
    eval->add_option("--k", eval_opt.ks, "k values")->delimiter(',');
    eval->add_option("--temperature", eval_opt.temperature, "sampling temperature for pass@k");
    eval->add_option("--max-response-len,--max_response_len", eval_opt.max_response_len, "generation length cap");
    eval->add_option("--seed", eval_opt.seed, "sampling seed");
    eval->add_option("--out", eval_opt.out, "also write eval.csv here");

    ConfigFlags sweep_flags;
    SweepOptions sweep_opt;
    auto* sweep = app.add_subcommand("sweep", "train a grid of (alpha, beta) x seeds");
    add_config_flags(sweep, sweep_flags);
    sweep->add_option("--alphas", sweep_opt.alphas, "alpha values")->delimiter(',');
    sweep->add_option("--betas", sweep_opt.betas, "beta values")->delimiter(',');
    sweep->add_option("--seeds", sweep_opt.seeds, "seeds")->delimiter(',');
    sweep->add_option("--jobs", sweep_opt.jobs, "cells trained in parallel");
    sweep->add_option("--tail", sweep_opt.tail, "rows averaged for the summary's final values");
    sweep->add_option("--out", sweep_opt.out, "output directory (default $UCAS_OUTPUT_ROOT/sweep)");

    ReportOptions report_opt;
    auto* report = app.add_subcommand("report", "aggregate metrics across seeds; confidence-shift table");
    report->add_option("metrics", report_opt.metrics, "metrics.csv files (one per seed)");
    report->add_option("--before", report_opt.before, "checkpoint before training");
    report->add_option("--after", report_opt.after, "checkpoint after training");
    report->add_option("--task", report_opt.set.task, "generate a held-out set for this task");
    report->add_option("--eval-set", report_opt.set.eval_set, "prompt<TAB>answer file");
    report->add_option("--count", report_opt.set.count, "generated set size");
    report->add_option("--eval-seed", report_opt.set.eval_seed, "generated set seed");
    report->add_option("--max-response-len,--max_response_len", report_opt.max_response_len, "generation length cap");
    report->add_option("--out", report_opt.out, "output directory (default $UCAS_OUTPUT_ROOT/report)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*train) return cmd_train(train_flags, train_opt);
        if (*replay) return cmd_replay(replay_opt);
        if (*eval) return cmd_eval(eval_opt);
        if (*sweep) return cmd_sweep(sweep_flags, sweep_opt);
        if (*report) return cmd_report(report_opt);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const NumericalAbort& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return kAbort;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kData;
    } catch (const VersionError& e) {
        std::cerr << "version error: " << e.what() << '\n';
        return kData;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kData;
    } catch (const InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}

// Command-line driver: dataset generation, surrogate training and
// validation, single-round optimization, the coordination loop and reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tdvsm/coord.hpp"
#include "tdvsm/errors.hpp"
#include "tdvsm/margin.hpp"
#include "tdvsm/mlpvsm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace tdvsm;

namespace {

enum Exit { ok = 0, usage = 1, data_error = 2, numerical = 3 };

class ConfigError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Configuration file

struct Config {
    DatasetConfig dataset;
    TrainConfig train;
    std::string train_contingency = "none";
    int folds = 5;
    std::vector<int> sweep{10, 20, 40};
    DxTrainConfig dx;
    CoordOptions coord;
    std::optional<double> target;
};

template <class T>
void take(json& sec, const char* key, T& dst, const std::string& where)
{
    if (!sec.contains(key)) return;
    try {
        dst = sec.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(fmt::format("config {}.{}: wrong type", where, key));
    }
    sec.erase(key);
}

void leftovers(const json& sec, const std::string& where)
{
    for (auto it = sec.begin(); it != sec.end(); ++it) throw ConfigError(fmt::format("config: unknown key {}.{}", where, it.key()));
}

Config load_config(const std::string& path)
{
    Config c;
    if (path.empty()) return c;
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read config {}", path));
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("config {} is not valid JSON: {}", path, e.what()));
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");

    if (j.contains("sampling")) {
        auto s = j["sampling"];
        auto& d = c.dataset;
        take(s, "scenarios", d.scenarios, "sampling");
        std::uint64_t seed = d.seed;
        take(s, "seed", seed, "sampling");
        d.seed = seed;
        std::vector<int> outages;
        take(s, "contingencies", outages, "sampling");
        for (int b : outages) d.contingencies.push_back(Contingency::outage(b));
        std::string dist = "uniform";
        take(s, "distribution", dist, "sampling");
        if (dist == "truncated_normal") d.sampling.distribution = Spread::truncated_normal;
        else if (dist != "uniform") throw ConfigError("sampling.distribution must be uniform or truncated_normal");
        take(s, "load_p_spread", d.sampling.load_p_spread, "sampling");
        take(s, "load_q_spread", d.sampling.load_q_spread, "sampling");
        take(s, "gen_p_spread", d.sampling.gen_p_spread, "sampling");
        take(s, "sample_vg", d.sampling.sample_vg, "sampling");
        take(s, "vg_spread", d.sampling.vg_spread, "sampling");
        take(s, "lambda_step", d.margin.step, "sampling");
        take(s, "lambda_width", d.margin.width, "sampling");
        take(s, "lambda_cap", d.margin.lambda_cap, "sampling");
        leftovers(s, "sampling");
        j.erase("sampling");
    }
    if (j.contains("training")) {
        auto s = j["training"];
        auto& t = c.train;
        take(s, "hidden", t.hidden, "training");
        take(s, "max_epochs", t.max_epochs, "training");
        take(s, "patience", t.patience, "training");
        take(s, "val_fraction", t.val_fraction, "training");
        take(s, "normalize", t.normalize, "training");
        take(s, "delta0", t.delta0, "training");
        std::uint64_t seed = t.seed;
        take(s, "seed", seed, "training");
        t.seed = seed;
        take(s, "contingency", c.train_contingency, "training");
        take(s, "folds", c.folds, "training");
        take(s, "sweep", c.sweep, "training");
        leftovers(s, "training");
        j.erase("training");
    }
    if (j.contains("dx_training")) {
        auto s = j["dx_training"];
        take(s, "samples", c.dx.samples, "dx_training");
        take(s, "hidden", c.dx.train.hidden, "dx_training");
        take(s, "max_epochs", c.dx.train.max_epochs, "dx_training");
        leftovers(s, "dx_training");
        j.erase("dx_training");
    }
    if (j.contains("coordination")) {
        auto s = j["coordination"];
        auto& o = c.coord;
        double target = 0.0;
        if (s.contains("target_mw")) {
            take(s, "target_mw", target, "coordination");
            c.target = target;
        }
        std::string weights = to_string(o.weights);
        take(s, "weights", weights, "coordination");
        o.weights = weight_mode_from(weights);
        take(s, "max_iters", o.max_iters, "coordination");
        take(s, "tol_mw", o.tol, "coordination");
        take(s, "max_drop_mw", o.max_drop, "coordination");
        take(s, "alpha", o.alpha, "coordination");
        take(s, "eps_band", o.eps_band, "coordination");
        leftovers(s, "coordination");
        j.erase("coordination");
    }
    leftovers(j, "");
    return c;
}

// ---------------------------------------------------------------------------

struct Args {
    std::string case_path;  // empty: the bundled five-bus case, except for train
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string weights;
    std::optional<double> target;
    std::string out = ".";
    int jobs = 1;
    bool verbose = false;
    std::string dataset;
    std::string model_dir = ".";
    std::vector<std::string> traces;
};

fs::path out_dir(const Args& a)
{
    fs::path p(a.out);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw ConfigError(fmt::format("cannot create output directory {}: {}", a.out, ec.message()));
    return p;
}

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream o(p, std::ios::binary);
    if (!o) throw ConfigError(fmt::format("cannot write {}", p.string()));
    o << text;
    spdlog::info("wrote {}", p.string());
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot read {}", p.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Dataset load_dataset(const std::string& path, const std::string& contingency)
{
    if (path.empty()) throw ConfigError("--dataset is required");
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read dataset {}", path));
    if (in.peek() == std::ifstream::traits_type::eof()) throw PreconditionError("≥ 50 samples required (the dataset is empty)");
    auto d = read_dataset_csv(in);
    if (!contingency.empty() && contingency != "all") {
        std::erase_if(d.samples, [&](const VsmSample& s) { return s.contingency != contingency; });
    }
    if (d.samples.size() < 50) throw PreconditionError("≥ 50 samples required");
    return d;
}

json metrics_json(const Metrics& m)
{
    return {{"r2", m.r2}, {"mae_pct", m.mae_pct}, {"mse", m.mse}, {"excluded", m.excluded}};
}

std::vector<MlpModel> dx_models(const TdSystem& sys, const fs::path& dir, const Config& cfg)
{
    std::vector<MlpModel> out;
    for (std::size_t l = 0; l < sys.link_feeders.size(); ++l) {
        const auto& link = sys.net.boundary_links[l];
        const auto p = dir / fmt::format("dx_{}.json", link.feeder);
        if (fs::exists(p)) {
            out.push_back(load_model(p));
            continue;
        }
        spdlog::info("no distribution model at {}; fitting one for feeder {}", p.string(), link.feeder);
        out.push_back(train_dx_model(sys.link_feeders[l], link, cfg.dx).model);
    }
    return out;
}

std::string case_name(const std::string& path) { return fs::path(path).stem().string(); }

std::string case_or_default(const Args& a)
{
    return a.case_path.empty() ? std::string(TDVSM_DATA_DIR) + "/five_bus.case" : a.case_path;
}

// ---------------------------------------------------------------------------
// Subcommands

int gen_dataset(const Args& a, Config cfg)
{
    if (a.seed) cfg.dataset.seed = *a.seed;
    cfg.dataset.jobs = a.jobs;
    const auto c = load_case(case_or_default(a));
    const auto rep = generate_dataset(c, cfg.dataset);
    for (const auto& s : rep.skipped) spdlog::warn("skipped {}", s);
    for (const auto& s : rep.anomalies) spdlog::warn("anomaly {}", s);
    std::ostringstream o;
    write_dataset_csv(o, rep.data);
    write_file(out_dir(a) / "dataset.csv", o.str());
    spdlog::info("{} samples, {} skipped", rep.data.samples.size(), rep.skipped.size());
    return ok;
}

int train(const Args& a, Config cfg)
{
    if (a.seed) cfg.train.seed = *a.seed;
    const auto d = load_dataset(a.dataset, cfg.train_contingency);
    const auto r = train_rprop(d.features(), d.targets(), cfg.train, d.feature_names);
    const auto dir = out_dir(a);
    save_model(r.model, dir / "vsm_model.json");
    json m{{"samples", d.samples.size()},
           {"hidden", cfg.train.hidden},
           {"epochs", r.epochs},
           {"best_epoch", r.best_epoch},
           {"validation", metrics_json(r.validation)},
           {"dataset_hash", r.model.dataset_hash}};

    if (!a.case_path.empty()) {
        const auto sys = make_system(load_case(a.case_path));
        m["dx_models"] = json::array();
        for (std::size_t l = 0; l < sys.link_feeders.size(); ++l) {
            const auto& link = sys.net.boundary_links[l];
            auto dxc = cfg.dx;
            if (a.seed) dxc.train.seed = *a.seed;
            const auto dr = train_dx_model(sys.link_feeders[l], link, dxc);
            save_model(dr.model, dir / fmt::format("dx_{}.json", link.feeder));
            m["dx_models"].push_back({{"feeder", link.feeder}, {"validation", metrics_json(dr.validation)}});
        }
    }
    write_file(dir / "metrics.json", m.dump(2) + "\n");
    std::cout << fmt::format("held-out R2 {:.4f}, MAE {:.3f}%\n", r.validation.r2, r.validation.mae_pct);
    return ok;
}

int validate(const Args& a, Config cfg)
{
    if (a.seed) cfg.train.seed = *a.seed;
    const auto d = load_dataset(a.dataset, cfg.train_contingency);
    const auto X = d.features();
    const auto y = d.targets();
    json v{{"samples", d.samples.size()}, {"folds", cfg.folds}};
    std::ostringstream md;
    md << "# Surrogate validation\n\n" << d.samples.size() << " samples, " << cfg.folds << "-fold cross-validation.\n\n";

    const auto model_path = fs::path(a.model_dir) / "vsm_model.json";
    if (fs::exists(model_path)) {
        const auto m = load_model(model_path);
        Eigen::VectorXd pred(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) pred(i) = forward(m, X.row(i).transpose());
        const auto met = metrics(y, pred);
        v["model"] = metrics_json(met);
        md << fmt::format("Saved model on this dataset: R2 {:.4f}, MAE {:.3f}%\n\n", met.r2, met.mae_pct);
    }

    md << "| Hidden units | Mean R2 | Mean MAE % | Pooled R2 |\n| --- | ---: | ---: | ---: |\n";
    v["sweep"] = json::array();
    auto widths = cfg.sweep;
    if (std::find(widths.begin(), widths.end(), cfg.train.hidden) == widths.end()) widths.push_back(cfg.train.hidden);
    std::sort(widths.begin(), widths.end());
    for (int k : widths) {
        auto t = cfg.train;
        t.hidden = k;
        const auto cv = kfold_cv(X, y, t, cfg.folds);
        json folds = json::array();
        for (const auto& f : cv.folds) folds.push_back(metrics_json(f));
        v["sweep"].push_back({{"hidden", k}, {"mean_r2", cv.mean_r2}, {"mean_mae_pct", cv.mean_mae_pct},
                              {"pooled", metrics_json(cv.pooled)}, {"folds", folds}});
        md << fmt::format("| {} | {:.4f} | {:.3f} | {:.4f} |\n", k, cv.mean_r2, cv.mean_mae_pct, cv.pooled.r2);
    }
    const auto dir = out_dir(a);
    write_file(dir / "validation.json", v.dump(2) + "\n");
    write_file(dir / "validation.md", md.str());
    return ok;
}

struct LoopSetup {
    TdSystem sys;
    MlpModel vsm;
    std::vector<MlpModel> dx;
    CoordOptions opt;
};

LoopSetup loop_setup(const Args& a, Config cfg)
{
    LoopSetup s;
    s.sys = make_system(load_case(case_or_default(a)));
    const auto model_path = fs::path(a.model_dir) / "vsm_model.json";
    if (!fs::exists(model_path)) throw ConfigError(fmt::format("no surrogate at {} (run train first)", model_path.string()));
    s.vsm = load_model(model_path);
    if (a.seed) cfg.dx.train.seed = *a.seed;
    s.opt = cfg.coord;
    if (!a.weights.empty()) s.opt.weights = weight_mode_from(a.weights);
    const auto target = a.target ? a.target : cfg.target;
    if (!target) throw ConfigError("a VSM target is required (--target or coordination.target_mw)");
    s.opt.target = *target;
    s.opt.jobs = a.jobs;
    if (s.opt.weights == WeightMode::sensitivity) s.dx = dx_models(s.sys, a.model_dir, cfg);
    return s;
}

int emit_loop(const Args& a, const CoordinationTrace& t, const char* trace_file, bool csvs)
{
    const auto dir = out_dir(a);
    std::ostringstream tr;
    write_trace(tr, t);
    write_file(dir / trace_file, tr.str());
    if (csvs) {
        std::ostringstream v, tx;
        write_vsm_csv(v, t);
        write_file(dir / "vsm_iterations.csv", v.str());
        write_dispatch_tx_csv(tx, t);
        write_file(dir / "dispatch_tx.csv", tx.str());
        for (std::size_t l = 0; l < t.link_names.size(); ++l) {
            std::ostringstream dx;
            write_dispatch_dx_csv(dx, t, static_cast<int>(l));
            const auto& name = t.link_names[l];
            write_file(dir / fmt::format("dispatch_dx_{}.csv", name.substr(name.find(':') + 1)), dx.str());
        }
    }
    write_file(dir / "report.md", render_report({tr.str()}));
    std::cout << fmt::format("VSM {:.3f} -> {:.3f} MW (target {:.3f}) in {} iteration(s), {:.4f} MVAr requested, {}\n", t.vsm_initial,
                             t.vsm_final, t.target, t.iterations.size(), t.total_requested_mvar,
                             t.converged ? "converged" : "not converged");
    if (t.aborted) {
        spdlog::error("{}", t.message);
        return numerical;
    }
    if (!t.converged) spdlog::warn("{}", t.message);
    return ok;
}

int optimize(const Args& a, const Config& cfg)
{
    auto s = loop_setup(a, cfg);
    s.opt.max_iters = 1;
    auto t = run_loop(s.sys, s.vsm, s.dx, s.opt);
    t.case_name = case_name(case_or_default(a));
    return emit_loop(a, t, "dispatch.txt", false);
}

int run_loop_cmd(const Args& a, const Config& cfg)
{
    auto s = loop_setup(a, cfg);
    auto t = run_loop(s.sys, s.vsm, s.dx, s.opt);
    t.case_name = case_name(case_or_default(a));
    return emit_loop(a, t, "trace.txt", true);
}

int report(const Args& a)
{
    if (a.traces.empty()) throw ConfigError("at least one trace file is required");
    std::vector<std::string> texts;
    for (const auto& p : a.traces) texts.push_back(read_file(p));
    write_file(out_dir(a) / "report.md", render_report(texts));
    return ok;
}

}  // namespace

int main(int argc, char** argv)
{
    spdlog::set_default_logger(spdlog::stderr_color_st("tdvsm"));
    spdlog::set_pattern("[%l] %v");

    CLI::App app{"Voltage stability margin surrogate and TSO-DSO coordination toolkit"};
    app.require_subcommand(1);
    Args a;
    std::string cfg_path;

    auto common = [&](CLI::App* s) {
        s->add_option("--config", a.config, "JSON configuration file")->check(CLI::ExistingFile);
        s->add_option("--seed", a.seed, "master seed override");
        s->add_option("--out", a.out, "output directory")->capture_default_str();
        s->add_option("--jobs", a.jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
        s->add_flag("--verbose,-v", a.verbose, "debug logging");
    };
    auto with_case = [&](CLI::App* s) { s->add_option("--case", a.case_path, "case file (default: bundled five-bus case)"); };
    auto with_loop = [&](CLI::App* s) {
        with_case(s);
        s->add_option("--model-dir", a.model_dir, "directory with vsm_model.json and dx_<feeder>.json")->capture_default_str();
        s->add_option("--weights", a.weights, "sensitivity|equal")->check(CLI::IsMember({"sensitivity", "equal"}));
        s->add_option("--target", a.target, "VSM target, MW");
    };

    auto* gen = app.add_subcommand("gen-dataset", "sample scenarios and compute their VSM");
    common(gen);
    with_case(gen);
    auto* tr = app.add_subcommand("train", "fit the VSM surrogate (and feeder models when --case exists)");
    common(tr);
    with_case(tr);
    tr->add_option("--dataset", a.dataset, "dataset CSV")->required();
    auto* val = app.add_subcommand("validate", "k-fold cross-validation and hidden-width sweep");
    common(val);
    val->add_option("--dataset", a.dataset, "dataset CSV")->required();
    val->add_option("--model-dir", a.model_dir, "directory holding vsm_model.json to score")->capture_default_str();
    auto* opt = app.add_subcommand("optimize", "one TSO and DSO round");
    common(opt);
    with_loop(opt);
    auto* loop = app.add_subcommand("run-loop", "iterate TSO and DSO rounds to the target");
    common(loop);
    with_loop(loop);
    auto* rep = app.add_subcommand("report", "markdown summary of one or more traces");
    common(rep);
    rep->add_option("traces", a.traces, "trace files")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return usage;
    }
    spdlog::set_level(a.verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        const auto cfg = load_config(a.config);
        if (*gen) return gen_dataset(a, cfg);
        if (*tr) return train(a, cfg);
        if (*val) return validate(a, cfg);
        if (*opt) return optimize(a, cfg);
        if (*loop) return run_loop_cmd(a, cfg);
        if (*rep) return report(a);
    } catch (const NumericalError& e) {
        spdlog::error("{}", e.what());
        return numerical;
    } catch (const InfeasibleError& e) {
        spdlog::error("{}", e.what());
        return numerical;
    } catch (const IslandingError& e) {
        spdlog::error("{}", e.what());
        return numerical;
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return data_error;
    } catch (const nlohmann::json::exception& e) {
        spdlog::error("malformed JSON input: {}", e.what());
        return data_error;
    } catch (const std::ios_base::failure& e) {
        spdlog::error("{}", e.what());
        return data_error;
    }
    return usage;
}

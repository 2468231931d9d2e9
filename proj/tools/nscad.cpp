// nscad: contextual anomaly detection with Normalcy Scores.
//
// Subcommands: inject, synth, train, score, benchmark, sensitivity, triage,
// rq2, grid. Every run writes a manifest.json with the resolved configuration
// so that reruns are byte-reproducible (timings excluded).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <ns/harness.hpp>
#include <ns/model_io.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- exit codes, stable per error class --------------------------------------

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;       // bad flags / ConfigError
constexpr int kExitData = 3;        // DataError
constexpr int kExitDimension = 4;   // DimensionError
constexpr int kExitDegenerate = 5;  // DegenerateInputError
constexpr int kExitFactorize = 6;   // FactorizationError
constexpr int kExitNumerical = 7;   // NumericalError
constexpr int kExitMetric = 8;      // MetricError
constexpr int kExitResource = 9;    // ResourceError
constexpr int kExitInternal = 10;   // anything else

// --- small helpers ------------------------------------------------------------

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<double> split_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : split_list(s)) out.push_back(std::stod(tok));
    return out;
}

std::vector<std::uint64_t> split_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (const auto& tok : split_list(s)) out.push_back(std::stoull(tok));
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const json& options,
                    const std::vector<std::string>& outputs) {
    json m{{"tool", "nscad"}, {"version", "0.1.0"}, {"command", command},
           {"options", options}, {"outputs", outputs}};
    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw ns::DataError("cannot write manifest in " + out_dir.string());
    out << m.dump(2) << "\n";
}

// --- shared option groups ------------------------------------------------------

struct GlobalOpts {
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    std::string config; // JSON defaults, expanded before parsing
    int threads = 1;    // accepted for interface stability; execution is serial

    fs::path ensure_out_dir() const {
        fs::path p(out_dir);
        fs::create_directories(p);
        return p;
    }
    json to_json() const {
        return {{"seed", seed}, {"out_dir", out_dir}, {"threads", threads}};
    }
};

struct DataOpts {
    std::string input;
    std::string behavioral = "y";
    std::string contextual; // comma list; empty = all numeric columns
    std::string labels;     // optional labels column
    bool no_scale_y = false;

    ns::Dataset load(bool want_scaled_y) const {
        ns::LoadOptions opt;
        opt.labels_column = labels;
        ns::Dataset ds = ns::load_csv(input, behavioral, split_list(contextual), opt);
        if (want_scaled_y && !no_scale_y) ds = ns::minmax_scale_y(std::move(ds));
        return ds;
    }
    json to_json() const {
        return {{"input", input}, {"behavioral", behavioral}, {"contextual", contextual},
                {"labels", labels}, {"no_scale_y", no_scale_y}};
    }
};

struct TrainOpts {
    std::string kernel = "rq";
    double inducing_ratio = 0.05;
    int max_epochs = 40000;
    double adam_lr = 0.01;
    double natgrad_gamma = 0.02;
    bool no_natgrad = false;
    bool no_hypers = false;
    double tol = 1e-7;
    int window = 200;

    ns::TrainConfig train_config(std::uint64_t seed) const {
        ns::TrainConfig tc;
        tc.max_epochs = max_epochs;
        tc.adam_lr = adam_lr;
        tc.natgrad_gamma = natgrad_gamma;
        tc.natgrad_enabled = !no_natgrad;
        tc.optimize_hyperparameters = !no_hypers;
        tc.convergence_tol = tol;
        tc.convergence_window = window;
        tc.seed = seed;
        return tc;
    }
    ns::KernelFamily family() const { return ns::kernel_family_from_string(kernel); }
    json to_json() const {
        return {{"kernel", kernel}, {"inducing_ratio", inducing_ratio},
                {"max_epochs", max_epochs}, {"adam_lr", adam_lr},
                {"natgrad_gamma", natgrad_gamma}, {"no_natgrad", no_natgrad},
                {"no_hypers", no_hypers}, {"tol", tol}, {"window", window}};
    }
};

struct NsOpts {
    double hdi_mass = 0.95;
    long n_samples = 2000;
    double threshold = 2.0;
    std::string hdi_method = "kde";

    ns::NSConfig ns_config(std::uint64_t seed) const {
        ns::NSConfig c;
        c.hdi_mass = hdi_mass;
        c.n_samples = n_samples;
        c.threshold = threshold;
        if (hdi_method == "kde") c.hdi_method = ns::HdiMethod::KdeIntegration;
        else if (hdi_method == "sample") c.hdi_method = ns::HdiMethod::SampleShortestInterval;
        else throw ns::ConfigError("unknown hdi method: " + hdi_method);
        c.seed = seed;
        return c;
    }
    json to_json() const {
        return {{"hdi_mass", hdi_mass}, {"n_samples", n_samples},
                {"threshold", threshold}, {"hdi_method", hdi_method}};
    }
};

void add_data_opts(CLI::App* sub, DataOpts& d) {
    sub->add_option("--input", d.input, "input CSV with a header row")->required();
    sub->add_option("--behavioral", d.behavioral, "behavioral (target) column name");
    sub->add_option("--contextual", d.contextual,
                    "comma-separated contextual columns (default: all numeric)");
    sub->add_option("--labels", d.labels, "anomaly label column, if present");
    sub->add_flag("--no-scale-y", d.no_scale_y, "skip min-max scaling of the behavioral column");
}

void add_train_opts(CLI::App* sub, TrainOpts& t) {
    sub->add_option("--kernel", t.kernel, "kernel family: rq, matern52, rbf");
    sub->add_option("--inducing-ratio", t.inducing_ratio, "inducing points as a fraction of N");
    sub->add_option("--max-epochs", t.max_epochs, "optimization epoch cap");
    sub->add_option("--adam-lr", t.adam_lr, "Adam learning rate for hyperparameters");
    sub->add_option("--natgrad-gamma", t.natgrad_gamma, "natural-gradient step size");
    sub->add_flag("--no-natgrad", t.no_natgrad, "optimize everything with Adam");
    sub->add_flag("--no-hypers", t.no_hypers, "freeze kernel hyperparameters and inducing inputs");
    sub->add_option("--tol", t.tol, "relative ELBO convergence tolerance");
    sub->add_option("--window", t.window, "convergence window in epochs");
}

void add_ns_opts(CLI::App* sub, NsOpts& n) {
    sub->add_option("--hdi-mass", n.hdi_mass, "HDI probability mass");
    sub->add_option("--n-samples", n.n_samples, "posterior samples per observation");
    sub->add_option("--threshold", n.threshold, "anomaly threshold on the score scale");
    sub->add_option("--hdi-method", n.hdi_method, "HDI estimator: kde or sample");
}

// Shuffles rows by seed so "first rows" inducing initialization sees a random
// subset; the same convention the benchmark harness uses.
ns::Dataset shuffle_rows(const ns::Dataset& ds, std::uint64_t seed) {
    return ns::subset(ds, ns::shuffled_indices(ds.n(), seed));
}

ns::ModelFile train_model(const ns::Dataset& ds, const TrainOpts& t, std::uint64_t seed) {
    ns::Dataset shuffled = shuffle_rows(ds, seed);
    auto [c1, c2] = ns::default_latent_cfgs(shuffled.y, t.family(), t.inducing_ratio);
    ns::ModelFile mf;
    mf.model = ns::fit(shuffled.X, shuffled.y, c1, c2, t.train_config(seed));
    mf.x_mean = ds.x_mean;
    mf.x_std = ds.x_std;
    mf.y_min = ds.y_min;
    mf.y_max = ds.y_max;
    mf.y_scaled = ds.y_scaled;
    mf.column_names = ds.column_names;
    mf.behavioral_name = ds.behavioral_name;
    return mf;
}

// Loads a CSV so that it aligns with a trained model: same contextual columns
// (falling back to the raw categorical names behind one-hot columns), then the
// model's stored scaling.
ns::Dataset load_for_model(const ns::ModelFile& mf, const std::string& path) {
    ns::LoadOptions opt;
    opt.standardize = false;
    ns::Dataset ds;
    try {
        ds = ns::load_csv(path, mf.behavioral_name, mf.column_names, opt);
    } catch (const ns::DataError&) {
        // strip "=level" suffixes to recover the pre-encoding column names
        std::vector<std::string> raw;
        for (const auto& c : mf.column_names) {
            auto base = c.substr(0, c.find('='));
            if (raw.empty() || raw.back() != base) raw.push_back(base);
        }
        ds = ns::load_csv(path, mf.behavioral_name, raw, opt);
    }
    if (ds.column_names != mf.column_names)
        throw ns::DataError("input columns do not match the model's training columns");
    ds.X = ((ds.X.rowwise() - mf.x_mean.transpose()) * mf.x_std.cwiseInverse().asDiagonal()).eval();
    ds.x_mean = mf.x_mean;
    ds.x_std = mf.x_std;
    if (mf.y_scaled) {
        ds.y = (ds.y.array() - mf.y_min) / (mf.y_max - mf.y_min);
        ds.y_min = mf.y_min;
        ds.y_max = mf.y_max;
        ds.y_scaled = true;
    }
    return ds;
}

// Cross-validated pooled scores for one seed; mirrors the evaluation harness.
Eigen::VectorXd pooled_scores(const ns::Scorer& scorer, const ns::Dataset& injected, int k,
                              std::uint64_t seed) {
    const auto N = injected.n();
    auto order = ns::shuffled_indices(N, seed);
    auto fold = ns::kfold_split(N, k, seed);
    Eigen::VectorXd pooled(N);
    for (int f = 0; f < k; ++f) {
        std::vector<Eigen::Index> train_rows, test_rows;
        for (auto idx : order)
            (fold[static_cast<std::size_t>(idx)] == f ? test_rows : train_rows).push_back(idx);
        ns::Dataset train = ns::subset(injected, train_rows);
        ns::Dataset test = ns::subset(injected, test_rows);
        Eigen::VectorXd s = scorer(train, test, seed * 1000 + static_cast<std::uint64_t>(f));
        for (std::size_t t = 0; t < test_rows.size(); ++t)
            pooled[test_rows[t]] = s[static_cast<Eigen::Index>(t)];
    }
    return pooled;
}

// --- commands ------------------------------------------------------------------

int run_inject(const GlobalOpts& g, const DataOpts& d, long count, double ratio, double eps_low,
               double eps_high) {
    auto out_dir = g.ensure_out_dir();
    ns::Dataset ds = d.load(true);
    ns::InjectionConfig cfg;
    cfg.count = count;
    cfg.ratio = ratio;
    cfg.epsilon_low = eps_low;
    cfg.epsilon_high = eps_high;
    cfg.seed = g.seed;
    ns::Dataset injected = ns::inject_anomalies(ds, cfg);
    ns::write_csv(injected, (out_dir / "injected.csv").string());

    json opts = g.to_json();
    opts.update(d.to_json());
    opts.update(json{{"count", count}, {"ratio", ratio}, {"eps_low", eps_low},
                     {"eps_high", eps_high}, {"n_injected", injected.labels->sum()},
                     {"y_min", ds.y_min}, {"y_max", ds.y_max}});
    write_manifest(out_dir, "inject", opts, {"injected.csv"});
    return kExitOk;
}

int run_synth(const GlobalOpts& g, long n, const std::string& dist, double a, double b,
              const std::string& mean_kx, const std::string& mean_ky, const std::string& std_kx,
              const std::string& std_ky) {
    auto out_dir = g.ensure_out_dir();
    ns::SynthConfig cfg;
    if (dist == "exponential") cfg.context_dist = ns::SynthConfig::Dist::Exponential;
    else if (dist == "uniform") cfg.context_dist = ns::SynthConfig::Dist::Uniform;
    else throw ns::ConfigError("unknown context distribution: " + dist);
    cfg.dist_a = a;
    cfg.dist_b = b;
    cfg.mean_curve = {split_doubles(mean_kx), split_doubles(mean_ky)};
    cfg.std_curve = {split_doubles(std_kx), split_doubles(std_ky)};
    cfg.n = n;
    cfg.seed = g.seed;
    ns::Dataset ds = ns::synth_generate(cfg);
    ns::write_csv(ds, (out_dir / "synthetic.csv").string());

    json opts = g.to_json();
    opts.update(json{{"n", n}, {"dist", dist}, {"a", a}, {"b", b},
                     {"mean_knots_x", mean_kx}, {"mean_knots_y", mean_ky},
                     {"std_knots_x", std_kx}, {"std_knots_y", std_ky}});
    write_manifest(out_dir, "synth", opts, {"synthetic.csv"});
    return kExitOk;
}

int run_train(const GlobalOpts& g, const DataOpts& d, const TrainOpts& t) {
    auto out_dir = g.ensure_out_dir();
    ns::Dataset ds = d.load(true);
    ns::ModelFile mf = train_model(ds, t, g.seed);
    ns::save_model(mf, (out_dir / "model.json").string());

    json opts = g.to_json();
    opts.update(d.to_json());
    opts.update(t.to_json());
    opts["final_elbo"] = mf.model.train_stats.final_elbo;
    opts["epochs"] = mf.model.train_stats.epochs;
    write_manifest(out_dir, "train", opts, {"model.json"});
    if (mf.model.train_stats.warning_non_improving)
        std::cerr << "warning: final ELBO did not improve on the initial value\n";
    return kExitOk;
}

int run_score(const GlobalOpts& g, const std::string& method, const std::string& model_path,
              const std::string& input, const std::string& train_input, const DataOpts& d,
              const NsOpts& n) {
    auto out_dir = g.ensure_out_dir();
    std::vector<ns::ScoreRow> rows;

    if (method == "ns") {
        if (model_path.empty()) throw ns::ConfigError("score --method ns requires --model");
        ns::ModelFile mf = ns::load_model(model_path);
        ns::Dataset ds = load_for_model(mf, input);
        ns::NSConfig cfg = n.ns_config(g.seed);
        auto preds = ns::predict_latents(mf.model, ds.X);
        for (Eigen::Index i = 0; i < ds.n(); ++i) {
            ns::NSResult r = ns::assess_prediction(preds[static_cast<std::size_t>(i)], ds.y[i],
                                                   cfg, static_cast<std::uint64_t>(i));
            rows.push_back({i, ds.y[i], r.score, r.abs_score, true, r.hdi_low, r.hdi_high,
                            r.width, ns::to_string(r.verdict)});
        }
    } else if (method == "zscore") {
        DataOpts td = d;
        td.input = train_input.empty() ? input : train_input;
        ns::Dataset train = td.load(true);
        ns::ZScoreModel m = ns::zscore_fit(train.X, train.y);

        ns::Dataset test;
        if (td.input == input) {
            test = train;
        } else {
            ns::LoadOptions opt;
            opt.standardize = false;
            test = ns::load_csv(input, train.behavioral_name, train.column_names, opt);
            test.X = ((test.X.rowwise() - train.x_mean.transpose()) *
                      train.x_std.cwiseInverse().asDiagonal()).eval();
            if (train.y_scaled)
                test.y = (test.y.array() - train.y_min) / (train.y_max - train.y_min);
        }
        Eigen::VectorXd z = ns::zscore_score(m, test.X, test.y);
        for (Eigen::Index i = 0; i < z.size(); ++i)
            rows.push_back({i, test.y[i], z[i], std::abs(z[i]), false, 0, 0, 0, ""});
    } else {
        throw ns::ConfigError("score supports methods ns and zscore, got: " + method);
    }
    ns::write_scores_csv(rows, (out_dir / "scores.csv").string());

    json opts = g.to_json();
    opts.update(d.to_json());
    opts.update(n.to_json());
    opts.update(json{{"method", method}, {"model", model_path}, {"input", input},
                     {"train_input", train_input}});
    write_manifest(out_dir, "score", opts, {"scores.csv"});
    return kExitOk;
}

int run_benchmark(const GlobalOpts& g, const DataOpts& d, const std::string& methods_csv,
                  const std::string& seeds_csv, int k, long count, double ratio,
                  const TrainOpts& t) {
    auto out_dir = g.ensure_out_dir();
    auto methods = split_list(methods_csv);
    auto seeds = split_seeds(seeds_csv);
    if (methods.empty()) throw ns::ConfigError("benchmark needs at least one method");
    if (seeds.empty()) throw ns::ConfigError("benchmark needs at least one seed");

    ns::Dataset clean = d.load(true);
    ns::InjectionConfig ic;
    ic.count = count;
    ic.ratio = ratio;

    std::ofstream table(out_dir / "benchmark.csv");
    table << "method,roc_auc_mean,roc_auc_std,pr_auc_mean,pr_auc_std,"
             "p_at_n_mean,p_at_n_std,n_anomalies,k_folds,n_seeds\n";
    std::vector<std::string> outputs{"benchmark.csv"};

    // pooled per-row scores for the first seed, reused for the DeLong test
    ns::InjectionConfig first_ic = ic;
    first_ic.seed = seeds.front();
    ns::Dataset first_injected = ns::inject_anomalies(clean, first_ic);
    std::map<std::string, Eigen::VectorXd> pooled;

    for (const auto& method : methods) {
        ns::Scorer scorer = ns::make_scorer(method, t.family(), t.inducing_ratio,
                                            t.train_config(g.seed));
        ns::EvalReport rep = ns::cross_validated_eval(scorer, clean, ic, k, seeds);
        table << method << "," << fmt(rep.roc_auc_mean) << "," << fmt(rep.roc_auc_std) << ","
              << fmt(rep.pr_auc_mean) << "," << fmt(rep.pr_auc_std) << ","
              << fmt(rep.p_at_n_mean) << "," << fmt(rep.p_at_n_std) << ","
              << rep.n_used << "," << k << "," << seeds.size() << "\n";

        Eigen::VectorXd p = pooled_scores(scorer, first_injected, k, seeds.front());
        pooled[method] = p;
        std::string fname = "scores_" + method + ".csv";
        std::ofstream sc(out_dir / fname);
        sc << "row_id,label,score\n";
        for (Eigen::Index i = 0; i < p.size(); ++i)
            sc << i << "," << (*first_injected.labels)[i] << "," << fmt(p[i]) << "\n";
        outputs.push_back(fname);
    }
    table.close();

    if (methods.size() >= 2) {
        std::ofstream dl(out_dir / "delong.csv");
        dl << "method_a,method_b,auc_a,auc_b,z,p_value,degenerate_variance\n";
        for (std::size_t i = 0; i < methods.size(); ++i)
            for (std::size_t j = i + 1; j < methods.size(); ++j) {
                auto r = ns::delong_test(pooled[methods[i]], pooled[methods[j]],
                                         *first_injected.labels);
                dl << methods[i] << "," << methods[j] << "," << fmt(r.auc_a) << ","
                   << fmt(r.auc_b) << "," << fmt(r.z) << "," << fmt(r.p_value) << ","
                   << (r.degenerate_variance ? 1 : 0) << "\n";
            }
        outputs.push_back("delong.csv");
    }

    json opts = g.to_json();
    opts.update(d.to_json());
    opts.update(t.to_json());
    opts.update(json{{"methods", methods_csv}, {"seeds", seeds_csv}, {"k", k},
                     {"count", count}, {"ratio", ratio}});
    write_manifest(out_dir, "benchmark", opts, outputs);
    return kExitOk;
}

int run_sensitivity(const GlobalOpts& g, const DataOpts& d, const std::string& kernels_csv,
                    const std::string& ratios_csv, const TrainOpts& t, const NsOpts& n) {
    auto out_dir = g.ensure_out_dir();
    struct Config {
        std::string label;
        ns::KernelFamily family;
        double ratio;
    };
    std::vector<Config> configs;
    if (!kernels_csv.empty()) {
        for (const auto& kname : split_list(kernels_csv))
            configs.push_back({kname, ns::kernel_family_from_string(kname), t.inducing_ratio});
    } else {
        for (double r : split_doubles(ratios_csv))
            configs.push_back({"ratio=" + fmt(r), t.family(), r});
    }
    if (configs.size() < 2) throw ns::ConfigError("sensitivity needs at least 2 configurations");

    ns::Dataset ds = d.load(true);
    auto order = ns::shuffled_indices(ds.n(), g.seed);
    auto split = static_cast<std::size_t>(0.8 * static_cast<double>(order.size()));
    ns::Dataset train = ns::subset(ds, {order.begin(), order.begin() + static_cast<long>(split)});
    ns::Dataset test = ns::subset(ds, {order.begin() + static_cast<long>(split), order.end()});
    ns::NSConfig cfg = n.ns_config(g.seed);

    std::ofstream table(out_dir / "sensitivity.csv");
    table << "config,mean_abs_delta_score,mean_abs_delta_width,train_seconds,epochs\n";
    Eigen::VectorXd ref_score, ref_width;
    for (std::size_t c = 0; c < configs.size(); ++c) {
        auto [c1, c2] = ns::default_latent_cfgs(train.y, configs[c].family, configs[c].ratio);
        ns::HetGPModel model = ns::fit(train.X, train.y, c1, c2, t.train_config(g.seed));
        auto preds = ns::predict_latents(model, test.X);
        Eigen::VectorXd score(test.n()), width(test.n());
        for (Eigen::Index i = 0; i < test.n(); ++i) {
            auto r = ns::assess_prediction(preds[static_cast<std::size_t>(i)], test.y[i], cfg,
                                           static_cast<std::uint64_t>(i));
            score[i] = r.score;
            width[i] = r.width;
        }
        if (c == 0) {
            ref_score = score;
            ref_width = width;
        }
        table << configs[c].label << ","
              << fmt((score - ref_score).cwiseAbs().mean()) << ","
              << fmt((width - ref_width).cwiseAbs().mean()) << ","
              << fmt(model.train_stats.elapsed_seconds) << ","
              << model.train_stats.epochs << "\n";
    }

    json opts = g.to_json();
    opts.update(d.to_json());
    opts.update(t.to_json());
    opts.update(n.to_json());
    opts.update(json{{"kernels", kernels_csv}, {"ratios", ratios_csv}});
    write_manifest(out_dir, "sensitivity", opts, {"sensitivity.csv"});
    return kExitOk;
}

// header-indexed CSV reader for the triage inputs
std::map<long, std::vector<double>> read_columns(const std::string& path,
                                                 const std::vector<std::string>& wanted,
                                                 std::vector<long>& order) {
    std::ifstream in(path);
    if (!in) throw ns::DataError("cannot open file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ns::DataError("empty file: " + path);
    auto header = ns::detail::split_csv_line(line);
    std::vector<int> idx;
    int id_idx = -1;
    for (int i = 0; i < static_cast<int>(header.size()); ++i)
        if (header[i] == "row_id") id_idx = i;
    if (id_idx < 0) throw ns::DataError(path + ": missing row_id column");
    for (const auto& w : wanted) {
        int found = -1;
        for (int i = 0; i < static_cast<int>(header.size()); ++i)
            if (header[i] == w) found = i;
        if (found < 0) throw ns::DataError(path + ": missing column " + w);
        idx.push_back(found);
    }
    std::map<long, std::vector<double>> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = ns::detail::split_csv_line(line);
        cells.resize(header.size());
        long id = std::stol(cells[static_cast<std::size_t>(id_idx)]);
        std::vector<double> vals;
        for (int i : idx) {
            double v;
            if (!ns::detail::parse_double(cells[static_cast<std::size_t>(i)], v))
                throw ns::DataError(path + ": non-numeric cell in row " + std::to_string(id));
            vals.push_back(v);
        }
        order.push_back(id);
        out[id] = std::move(vals);
    }
    return out;
}

int run_triage(const GlobalOpts& g, const std::string& z_path, const std::string& ns_path,
               double threshold) {
    auto out_dir = g.ensure_out_dir();
    std::vector<long> z_order, ns_order;
    auto z_rows = read_columns(z_path, {"score"}, z_order);
    auto ns_rows = read_columns(ns_path, {"hdi_low", "hdi_high"}, ns_order);
    if (z_rows.size() != ns_rows.size())
        throw ns::DataError("triage inputs have different row counts");
    for (const auto& [id, _] : z_rows)
        if (!ns_rows.count(id)) throw ns::DataError("row id mismatch between triage inputs");

    std::map<std::string, long> counts;
    std::ofstream table(out_dir / "triage.csv");
    table << "row_id,z,hdi_low,hdi_high,class\n";
    for (long id : z_order) {
        double z = std::abs(z_rows[id][0]);
        double lo = ns_rows[id][0], hi = ns_rows[id][1];
        auto cls = ns::to_string(ns::triage_classify(z, lo, hi, threshold));
        ++counts[cls];
        table << id << "," << fmt(z) << "," << fmt(lo) << "," << fmt(hi) << "," << cls << "\n";
    }
    table.close();

    json summary{{"threshold", threshold}, {"total", static_cast<long>(z_order.size())},
                 {"counts", counts},
                 {"confirmed", counts["both-anomalous"] + counts["both-normal"]}};
    std::ofstream sum(out_dir / "triage_summary.json");
    sum << summary.dump(2) << "\n";

    json opts = g.to_json();
    opts.update(json{{"zscores", z_path}, {"ns", ns_path}, {"threshold", threshold}});
    write_manifest(out_dir, "triage", opts, {"triage.csv", "triage_summary.json"});
    return kExitOk;
}

int run_rq2(const GlobalOpts& g, const DataOpts& d, const std::string& detector,
            const std::string& model_path, const TrainOpts& t, const NsOpts& n) {
    auto out_dir = g.ensure_out_dir();
    ns::HetGPModel model;
    ns::Dataset ds;
    if (!model_path.empty()) {
        ns::ModelFile mf = ns::load_model(model_path);
        ds = load_for_model(mf, d.input);
        model = mf.model;
    } else {
        ds = d.load(true);
        model = train_model(ds, t, g.seed).model;
    }
    ns::Rq2Report rep = ns::rq2_correlate(model, ds, detector, n.ns_config(g.seed), g.seed);

    std::ofstream rows(out_dir / "rq2_rows.csv");
    rows << "row_id,width,context_score,context_anomalous\n";
    for (Eigen::Index i = 0; i < rep.widths.size(); ++i)
        rows << i << "," << fmt(rep.widths[i]) << "," << fmt(rep.context_scores[i]) << ","
             << (rep.context_anomalous[static_cast<std::size_t>(i)] ? 1 : 0) << "\n";
    rows.close();

    // plot-ready KDE of widths for the two groups
    std::ofstream kde_out(out_dir / "rq2_kde.csv");
    kde_out << "group,width,density\n";
    for (int group = 0; group < 2; ++group) {
        std::vector<double> w;
        for (Eigen::Index i = 0; i < rep.widths.size(); ++i)
            if (rep.context_anomalous[static_cast<std::size_t>(i)] == (group == 1))
                w.push_back(rep.widths[i]);
        if (w.size() < 10) continue;
        Eigen::VectorXd wv = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<long>(w.size()));
        try {
            ns::KdeDensity kd = ns::kde_build(wv, ns::BandwidthRule::Silverman);
            const char* name = group == 1 ? "context-anomalous" : "inlier";
            for (Eigen::Index i = 0; i < kd.grid.size(); ++i)
                kde_out << name << "," << fmt(kd.grid[i]) << "," << fmt(kd.density_values[i])
                        << "\n";
        } catch (const ns::DegenerateInputError&) {
            // constant widths in this group: no curve to export
        }
    }
    kde_out.close();

    json report{{"detector", detector},
                {"tau", rep.tau.tau},
                {"all_tied", rep.tau.all_tied},
                {"median_width_anomalous", rep.median_width_anomalous},
                {"median_width_inlier", rep.median_width_inlier},
                {"n", rep.widths.size()}};
    std::ofstream rp(out_dir / "rq2_report.json");
    rp << report.dump(2) << "\n";

    json opts = g.to_json();
    opts.update(d.to_json());
    opts.update(t.to_json());
    opts.update(n.to_json());
    opts.update(json{{"detector", detector}, {"model", model_path}});
    write_manifest(out_dir, "rq2", opts, {"rq2_rows.csv", "rq2_kde.csv", "rq2_report.json"});
    return kExitOk;
}

int run_grid(const GlobalOpts& g, const std::string& model_path, double y_value,
             const std::string& lo_csv, const std::string& hi_csv, const std::string& res_csv,
             const NsOpts& n) {
    auto out_dir = g.ensure_out_dir();
    ns::ModelFile mf = ns::load_model(model_path);
    auto lo = split_doubles(lo_csv), hi = split_doubles(hi_csv);
    auto res_d = split_doubles(res_csv);

    ns::GridSpec spec;
    // bounds arrive in raw feature units; the model operates on standardized X
    for (std::size_t d = 0; d < lo.size(); ++d) {
        auto j = static_cast<Eigen::Index>(d);
        if (j >= mf.x_mean.size())
            throw ns::DimensionError(static_cast<int>(mf.x_mean.size()),
                                     static_cast<int>(lo.size()));
        spec.lo.push_back((lo[d] - mf.x_mean[j]) / mf.x_std[j]);
        spec.hi.push_back((hi[d] - mf.x_mean[j]) / mf.x_std[j]);
    }
    for (double r : res_d) spec.res.push_back(std::lround(r));
    double y = mf.y_scaled ? (y_value - mf.y_min) / (mf.y_max - mf.y_min) : y_value;

    auto rows = ns::uncertainty_grid(mf.model, spec, y, n.ns_config(g.seed));
    std::ofstream table(out_dir / "grid.csv");
    for (const auto& c : mf.column_names) table << c << ",";
    table << "score,abs_score,hdi_low,hdi_high,width,verdict\n";
    for (const auto& row : rows) {
        for (Eigen::Index j = 0; j < row.context.size(); ++j)
            table << fmt(row.context[j] * mf.x_std[j] + mf.x_mean[j]) << ",";
        const auto& r = row.result;
        table << fmt(r.score) << "," << fmt(r.abs_score) << "," << fmt(r.hdi_low) << ","
              << fmt(r.hdi_high) << "," << fmt(r.width) << "," << ns::to_string(r.verdict)
              << "\n";
    }

    json opts = g.to_json();
    opts.update(n.to_json());
    opts.update(json{{"model", model_path}, {"y", y_value}, {"lo", lo_csv}, {"hi", hi_csv},
                     {"res", res_csv}});
    write_manifest(out_dir, "grid", opts, {"grid.csv"});
    return kExitOk;
}

// --- --config expansion --------------------------------------------------------

// Reads a JSON object of {long-option: value} and splices the equivalent
// tokens right after the subcommand so explicit flags still win.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::string config_path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (config_path.empty() || args.size() < 2) return args;

    std::ifstream in(config_path);
    if (!in) throw ns::ConfigError("cannot open config file: " + config_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ns::ConfigError(std::string("bad config JSON: ") + e.what());
    }
    if (!j.is_object()) throw ns::ConfigError("config must be a JSON object");

    std::vector<std::string> tokens;
    for (const auto& [key, value] : j.items()) {
        if (value.is_boolean()) {
            if (value.get<bool>()) tokens.push_back("--" + key);
        } else if (value.is_string()) {
            tokens.push_back("--" + key);
            tokens.push_back(value.get<std::string>());
        } else {
            tokens.push_back("--" + key);
            tokens.push_back(value.dump());
        }
    }
    // args[1] is the subcommand; insert defaults directly after it
    args.insert(args.begin() + 2, tokens.begin(), tokens.end());
    return args;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"contextual anomaly detection with Normalcy Scores"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "master random seed");
    app.add_option("--out-dir", g.out_dir, "output directory (created if missing)");
    app.add_option("--config", g.config, "JSON file of option defaults");
    app.add_option("--threads", g.threads, "worker threads (reserved; execution is serial)");

    auto make_sub = [&](const char* name, const char* desc) {
        auto* sub = app.add_subcommand(name, desc);
        sub->fallthrough();
        return sub;
    };

    // inject
    auto* inject = make_sub("inject", "perturb a fraction of behavioral values");
    DataOpts inj_d;
    long inj_count = 0;
    double inj_ratio = 0.0, inj_lo = 0.1, inj_hi = 0.5;
    add_data_opts(inject, inj_d);
    inject->add_option("--count", inj_count, "number of rows to perturb");
    inject->add_option("--ratio", inj_ratio, "fraction of rows to perturb");
    inject->add_option("--eps-low", inj_lo, "minimum perturbation magnitude");
    inject->add_option("--eps-high", inj_hi, "maximum perturbation magnitude");

    // synth
    auto* synth = make_sub("synth", "generate a 1-D heteroscedastic dataset");
    long syn_n = 1000;
    std::string syn_dist = "exponential", syn_mkx = "0,20,60", syn_mky = "50,110,170";
    std::string syn_skx = "0,20,60", syn_sky = "2,5,7";
    double syn_a = 0.4, syn_b = 0.0;
    synth->add_option("--n", syn_n, "number of rows");
    synth->add_option("--dist", syn_dist, "context distribution: exponential or uniform");
    synth->add_option("--a", syn_a, "exponential rate, or uniform lower bound");
    synth->add_option("--b", syn_b, "uniform upper bound");
    synth->add_option("--mean-knots-x", syn_mkx, "mean curve knot positions");
    synth->add_option("--mean-knots-y", syn_mky, "mean curve knot values");
    synth->add_option("--std-knots-x", syn_skx, "std curve knot positions");
    synth->add_option("--std-knots-y", syn_sky, "std curve knot values (positive)");

    // train
    auto* train = make_sub("train", "fit the heteroscedastic GP and save model.json");
    DataOpts train_d;
    TrainOpts train_t;
    add_data_opts(train, train_d);
    add_train_opts(train, train_t);

    // score
    auto* score = make_sub("score", "score rows with a trained model or the Z-score baseline");
    DataOpts score_d;
    NsOpts score_n;
    std::string score_method = "ns", score_model, score_train_input;
    score->add_option("--method", score_method, "ns or zscore");
    score->add_option("--model", score_model, "model.json from the train command");
    score->add_option("--input", score_d.input, "CSV of rows to score")->required();
    score->add_option("--train-input", score_train_input,
                      "training CSV for --method zscore (default: --input)");
    score->add_option("--behavioral", score_d.behavioral, "behavioral column (zscore only)");
    score->add_option("--contextual", score_d.contextual, "contextual columns (zscore only)");
    score->add_flag("--no-scale-y", score_d.no_scale_y, "skip min-max scaling (zscore only)");
    add_ns_opts(score, score_n);

    // benchmark
    auto* bench = make_sub("benchmark", "injection benchmark across methods");
    DataOpts bench_d;
    TrainOpts bench_t;
    std::string bench_methods, bench_seeds = "1,2,3,4,5";
    int bench_k = 5;
    long bench_count = 0;
    double bench_ratio = 0.05;
    add_data_opts(bench, bench_d);
    add_train_opts(bench, bench_t);
    bench->add_option("--methods", bench_methods, "comma list: ns,zscore,iforest,lof,hbos")
        ->required();
    bench->add_option("--seeds", bench_seeds, "comma list of seeds");
    bench->add_option("--k", bench_k, "folds");
    bench->add_option("--count", bench_count, "injected anomalies per seed");
    bench->add_option("--ratio", bench_ratio, "injected fraction per seed");

    // sensitivity
    auto* sens = make_sub("sensitivity", "compare kernels or inducing ratios on a fixed split");
    DataOpts sens_d;
    TrainOpts sens_t;
    NsOpts sens_n;
    std::string sens_kernels, sens_ratios;
    add_data_opts(sens, sens_d);
    add_train_opts(sens, sens_t);
    add_ns_opts(sens, sens_n);
    sens->add_option("--kernels", sens_kernels, "comma list of kernel families to compare");
    sens->add_option("--ratios", sens_ratios, "comma list of inducing ratios to compare");

    // triage
    auto* triage = make_sub("triage", "classify Z-score vs NS agreement per row");
    std::string tri_z, tri_ns;
    double tri_threshold = 2.0;
    triage->add_option("--zscores", tri_z, "scores.csv from score --method zscore")->required();
    triage->add_option("--ns", tri_ns, "scores.csv from score --method ns")->required();
    triage->add_option("--threshold", tri_threshold, "decision threshold");

    // rq2
    auto* rq2 = make_sub("rq2", "correlate HDI widths with contextual outlier scores");
    DataOpts rq2_d;
    TrainOpts rq2_t;
    NsOpts rq2_n;
    std::string rq2_detector = "iforest", rq2_model;
    add_data_opts(rq2, rq2_d);
    add_train_opts(rq2, rq2_t);
    add_ns_opts(rq2, rq2_n);
    rq2->add_option("--detector", rq2_detector, "contextual detector: iforest, lof, hbos");
    rq2->add_option("--model", rq2_model, "reuse a trained model.json instead of fitting");

    // grid
    auto* grid = make_sub("grid", "evaluate NS over a contextual grid at a fixed y");
    NsOpts grid_n;
    std::string grid_model, grid_lo, grid_hi, grid_res;
    double grid_y = 0.0;
    grid->add_option("--model", grid_model, "model.json from the train command")->required();
    grid->add_option("--y", grid_y, "behavioral value, raw units")->required();
    grid->add_option("--lo", grid_lo, "per-dimension lower bounds, raw units")->required();
    grid->add_option("--hi", grid_hi, "per-dimension upper bounds, raw units")->required();
    grid->add_option("--res", grid_res, "per-dimension resolutions")->required();
    add_ns_opts(grid, grid_n);

    try {
        auto args = expand_config(argc, argv);
        std::vector<const char*> cargs;
        for (const auto& a : args) cargs.push_back(a.c_str());
        app.parse(static_cast<int>(cargs.size()), cargs.data());

        if (*inject) return run_inject(g, inj_d, inj_count, inj_ratio, inj_lo, inj_hi);
        if (*synth)
            return run_synth(g, syn_n, syn_dist, syn_a, syn_b, syn_mkx, syn_mky, syn_skx,
                             syn_sky);
        if (*train) return run_train(g, train_d, train_t);
        if (*score)
            return run_score(g, score_method, score_model, score_d.input, score_train_input,
                             score_d, score_n);
        if (*bench)
            return run_benchmark(g, bench_d, bench_methods, bench_seeds, bench_k, bench_count,
                                 bench_ratio, bench_t);
        if (*sens) return run_sensitivity(g, sens_d, sens_kernels, sens_ratios, sens_t, sens_n);
        if (*triage) return run_triage(g, tri_z, tri_ns, tri_threshold);
        if (*rq2) return run_rq2(g, rq2_d, rq2_detector, rq2_model, rq2_t, rq2_n);
        if (*grid) return run_grid(g, grid_model, grid_y, grid_lo, grid_hi, grid_res, grid_n);
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const ns::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ns::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const ns::DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDimension;
    } catch (const ns::DegenerateInputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDegenerate;
    } catch (const ns::FactorizationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFactorize;
    } catch (const ns::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ns::MetricError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMetric;
    } catch (const ns::ResourceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitResource;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

#include "counts/cli.hpp"

#include "counts/csv.hpp"
#include "counts/error.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

namespace counts::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "usage"; }
};

int exit_code(const Error& e) {
    if (dynamic_cast<const UsageError*>(&e)) return 2;
    if (dynamic_cast<const MissingFileError*>(&e)) return 3;
    if (dynamic_cast<const ConfigError*>(&e)) return 4;
    if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return 5;
    if (dynamic_cast<const NumericError*>(&e)) return 6;
    return 1;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& message, const std::string& path = {}) {
    json j{{"error", kind}, {"message", message}};
    if (!path.empty()) j["path"] = path;
    err << j.dump() << "\n";
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError(path.string(), "missing file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw MissingFileError(path.string(), "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

fs::path model_file(const std::string& p) {
    const fs::path path(p);
    return fs::is_directory(path) ? path / "model.bin" : path;
}

const std::string& require_path(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
    return value;
}

void require_file(const fs::path& path) {
    if (!fs::exists(path)) throw MissingFileError(path.string(), "missing file " + path.string());
}

// Flag values plus the set of flags that were actually given.
struct Flags {
    std::string config;
    bool print_config = false;
    std::string kind, data, val_data, model, out, explanations;
    std::uint64_t seed = 0;
    int n = 0;
    bool plain = false;
    int epochs = 0, batch_size = 0, kl_warmup = 0;
    double lr = 0, lambda = 0;
    int mc_y = 0, mc_u = 0, mc_z = 0;
    std::string method;
    int target = 0, shift = 0, max_iters = 0, m_u = 0, n_z = 0;
    double threshold = 0, step_size = 0, epsilon = 0, l1 = 0;
    std::size_t limit = 0;
    std::string mse_norm;

    // Every subcommand registers its own option per flag name.
    std::map<std::string, std::vector<CLI::Option*>> options;
    bool given(const std::string& name) const {
        auto it = options.find(name);
        if (it == options.end()) return false;
        for (const CLI::Option* o : it->second)
            if (o->count() > 0) return true;
        return false;
    }
};

template <typename T>
CLI::Option* add(CLI::App* app, Flags& f, const std::string& name, T& var, const std::string& help) {
    CLI::Option* o = app->add_option(name, var, help);
    f.options[name].push_back(o);
    return o;
}

void add_common(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config, "JSON run configuration; flags override its values");
    app->add_flag("--print-config", f.print_config, "print the resolved configuration and exit");
    add(app, f, "--seed", f.seed, "global seed");
}

void add_io(CLI::App* app, Flags& f, bool model, bool explanations) {
    add(app, f, "--data", f.data, "dataset directory");
    if (model) add(app, f, "--model", f.model, "model file or training output directory");
    if (explanations) add(app, f, "--explanations", f.explanations, "explanation directory");
    add(app, f, "--out", f.out, "output directory");
}

void add_train(CLI::App* app, Flags& f) {
    add(app, f, "--val-data", f.val_data, "held-out dataset for the per-epoch validation metric");
    f.options["--plain"].push_back(app->add_flag("--plain", f.plain, "train the plain predictor q(y | x) only"));
    add(app, f, "--epochs", f.epochs, "training epochs");
    add(app, f, "--batch-size", f.batch_size, "minibatch size");
    add(app, f, "--lr", f.lr, "Adam learning rate");
    add(app, f, "--lambda", f.lambda, "weight of the supervised term");
    add(app, f, "--kl-warmup", f.kl_warmup, "epochs of linear KL warm-up");
    add(app, f, "--mc-y", f.mc_y, "y samples per instance (regression)");
    add(app, f, "--mc-u", f.mc_u, "u samples per y");
    add(app, f, "--mc-z", f.mc_z, "z samples per u");
}

void add_explain(CLI::App* app, Flags& f) {
    add(app, f, "--method", f.method, "counts | rgd")->check(CLI::IsMember({"counts", "rgd"}));
    add(app, f, "--target", f.target, "target class (classification)");
    add(app, f, "--shift", f.shift, "target shift in steps (spike)");
    add(app, f, "--threshold", f.threshold, "binarization threshold of the predicted sequence");
    add(app, f, "--step-size", f.step_size, "gradient step");
    add(app, f, "--epsilon", f.epsilon, "convergence threshold");
    add(app, f, "--max-iters", f.max_iters, "iteration cap");
    add(app, f, "--m-u", f.m_u, "abduction samples");
    add(app, f, "--n-z", f.n_z, "z samples per abduction sample");
    add(app, f, "--l1", f.l1, "L1 weight of the RGD baseline");
    add(app, f, "--limit", f.limit, "explain only the first N instances");
}

ArchConfig default_arch(synth::DatasetKind k) { return k == synth::DatasetKind::kSpike ? spike_arch() : toy_arch(); }

ExplainConfig default_explain(synth::DatasetKind k) {
    return k == synth::DatasetKind::kSpike ? spike_explain_config() : toy_explain_config();
}

json default_generator(synth::DatasetKind k) {
    synth::Dataset d;
    d.kind = k;
    switch (k) {
        case synth::DatasetKind::kToy: d.config = synth::ToyConfig{}; break;
        case synth::DatasetKind::kSpike: d.config = synth::SpikeConfig{}; break;
        case synth::DatasetKind::kPairs: d.config = synth::PairConfig{}; break;
    }
    return synth::config_to_json(d);
}

template <typename T>
T get(const json& j, const char* key, T fallback) {
    try {
        return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

RunConfig resolve(const std::string& command, const Flags& f) {
    const json file = f.config.empty() ? json::object() : read_json_file(f.config);
    if (!file.is_object()) throw ConfigError("configuration file must hold a JSON object");
    const json paths = file.value("paths", json::object());

    RunConfig c;
    c.command = command;
    c.data = f.given("--data") ? f.data : get<std::string>(paths, "data", "");
    c.model = f.given("--model") ? f.model : get<std::string>(paths, "model", "");
    c.out = f.given("--out") ? f.out : get<std::string>(paths, "out", "");
    c.explanations = f.given("--explanations") ? f.explanations : get<std::string>(paths, "explanations", "");
    c.val_data = f.given("--val-data") ? f.val_data : get<std::string>(paths, "val_data", "");

    if (f.given("--kind")) {
        c.kind = synth::dataset_kind_from_string(f.kind);
    } else if (file.contains("kind")) {
        c.kind = synth::dataset_kind_from_string(get<std::string>(file, "kind", "toy"));
    } else if (command != "gen" && !c.data.empty()) {
        c.kind = synth::dataset_kind_from_string(
            get<std::string>(read_json_file(fs::path(c.data) / "manifest.json"), "kind", "toy"));
    }

    c.seed = f.given("--seed") ? f.seed : get<std::uint64_t>(file, "seed", 0);
    c.generator = default_generator(c.kind);
    c.arch = default_arch(c.kind);
    c.explain = default_explain(c.kind);
    c.train.seed = c.seed;
    c.train.mc.seed = c.seed;
    c.explain.seed = c.seed;
    c.generator["seed"] = c.seed;

    if (file.contains("generator")) c.generator.merge_patch(file["generator"]);
    if (file.contains("arch")) {
        json a = counts::to_json(c.arch);
        a.merge_patch(file["arch"]);
        c.arch = arch_from_json(a);
    }
    if (file.contains("train")) c.train = train_from_json(file["train"], c.train);
    if (file.contains("explain")) c.explain = explain_from_json(file["explain"], c.explain);
    if (file.contains("metrics")) c.metrics = metric_options_from_json(file["metrics"], c.metrics);
    c.method = method_from_string(get<std::string>(file, "method", "counts"));
    if (file.contains("target") && !file["target"].is_null()) c.target = get<int>(file, "target", 0);
    c.limit = get<std::size_t>(file, "limit", 0);

    if (f.given("--n")) c.generator["n"] = f.n;
    if (f.given("--plain") && f.plain) c.arch.variant = Variant::kPlain;
    if (f.given("--epochs")) c.train.epochs = f.epochs;
    if (f.given("--batch-size")) c.train.batch_size = f.batch_size;
    if (f.given("--lr")) c.train.learning_rate = f.lr;
    if (f.given("--lambda")) c.train.lambda_sup = f.lambda;
    if (f.given("--kl-warmup")) c.train.kl_warmup_epochs = f.kl_warmup;
    if (f.given("--mc-y")) c.train.mc.n_y = f.mc_y;
    if (f.given("--mc-u")) c.train.mc.n_u = f.mc_u;
    if (f.given("--mc-z")) c.train.mc.n_z = f.mc_z;
    if (f.given("--method")) c.method = method_from_string(f.method);
    if (f.given("--target")) c.target = f.target;
    if (f.given("--shift")) c.metrics.shift = f.shift;
    if (f.given("--threshold")) c.metrics.threshold = f.threshold;
    if (f.given("--step-size")) c.explain.step_size = f.step_size;
    if (f.given("--epsilon")) c.explain.epsilon = f.epsilon;
    if (f.given("--max-iters")) c.explain.max_iters = f.max_iters;
    if (f.given("--m-u")) c.explain.m_u = f.m_u;
    if (f.given("--n-z")) c.explain.n_z = f.n_z;
    if (f.given("--l1")) c.explain.l1_weight = f.l1;
    if (f.given("--limit")) c.limit = f.limit;
    if (f.given("--mse-norm")) c.metrics.mse_norm = mse_norm_from_string(f.mse_norm);

    c.arch.validate();
    c.train.validate();
    c.explain.validate();
    c.metrics.validate();
    return c;
}

void write_run(const fs::path& dir, const RunConfig& c) { write_json_file(dir / "run.json", c.to_json()); }

std::vector<std::string> wide_header() {
    std::vector<std::string> h{"id"};
    for (int i = 0; i < synth::kToyLength; ++i) h.push_back("x" + std::to_string(i));
    return h;
}

fs::path xcf_path(const fs::path& dir, std::size_t id) { return dir / ("xcf_" + std::to_string(id) + ".csv"); }

void write_xcf(const fs::path& dir, synth::DatasetKind kind, std::size_t id, const Matrix& x) {
    const auto i = static_cast<std::int64_t>(id);
    if (kind == synth::DatasetKind::kSpike) {
        csv::Writer w(xcf_path(dir, id), {"id", "ch", "t", "x"});
        for (Eigen::Index ch = 0; ch < x.rows(); ++ch)
            for (Eigen::Index t = 0; t < x.cols(); ++t) {
                w << i << static_cast<std::int64_t>(ch) << static_cast<std::int64_t>(t + 1) << x(ch, t);
                w.end_row();
            }
        return;
    }
    csv::Writer w(xcf_path(dir, id), wide_header());
    w << i;
    for (Eigen::Index t = 0; t < x.cols(); ++t) w << x(0, t);
    w.end_row();
}

Matrix read_xcf(const fs::path& dir, synth::DatasetKind kind, std::size_t id, Eigen::Index D, Eigen::Index T) {
    const fs::path path = xcf_path(dir, id);
    require_file(path);
    const csv::Table tab = csv::read(path);
    Matrix x(D, T);
    if (kind == synth::DatasetKind::kSpike) {
        if (tab.rows.size() != static_cast<std::size_t>(D * T))
            throw ShapeError(path.string() + " has " + std::to_string(tab.rows.size()) + " rows, expected " +
                             std::to_string(D * T));
        const std::size_t cc = tab.column("ch"), ct = tab.column("t"), cx = tab.column("x");
        for (const auto& row : tab.rows) {
            const auto ch = csv::parse_int(row[cc]), t = csv::parse_int(row[ct]);
            if (ch < 0 || ch >= D || t < 1 || t > T) throw FormatError(path.string() + ": (ch, t) out of range");
            x(ch, t - 1) = csv::parse_double(row[cx]);
        }
        return x;
    }
    if (tab.rows.size() != 1) throw ShapeError(path.string() + " must hold exactly one row");
    for (Eigen::Index t = 0; t < T; ++t)
        x(0, t) = csv::parse_double(tab.rows[0][tab.column("x" + std::to_string(t))]);
    return x;
}

void write_targets(const fs::path& dir, const std::vector<std::size_t>& ids, const std::vector<CfTarget>& targets,
                   bool classification) {
    if (classification) {
        csv::Writer w(dir / "targets.csv", {"id", "label"});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            w << static_cast<std::int64_t>(ids[i]) << targets[i].label;
            w.end_row();
        }
        return;
    }
    csv::Writer w(dir / "targets.csv", {"id", "t", "y_cf"});
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (Eigen::Index t = 0; t < targets[i].sequence.size(); ++t) {
            w << static_cast<std::int64_t>(ids[i]) << static_cast<std::int64_t>(t + 1) << targets[i].sequence[t];
            w.end_row();
        }
}

void write_achieved(const fs::path& dir, const std::vector<std::size_t>& ids,
                    const std::vector<ExplanationResult>& results, const ArchConfig& a) {
    if (a.classification()) {
        std::vector<std::string> h{"id"};
        for (int k = 0; k < a.num_classes; ++k) h.push_back("p" + std::to_string(k));
        csv::Writer w(dir / "achieved.csv", h);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            w << static_cast<std::int64_t>(ids[i]);
            for (int k = 0; k < a.num_classes; ++k) w << results[i].y_achieved.probs[k];
            w.end_row();
        }
        return;
    }
    csv::Writer w(dir / "achieved.csv", {"id", "t", "mean", "log_var"});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const GaussianHead& g = results[i].y_achieved.gauss;
        for (Eigen::Index t = 0; t < g.mean.rows(); ++t) {
            w << static_cast<std::int64_t>(ids[i]) << static_cast<std::int64_t>(t + 1) << g.mean(t, 0)
              << g.log_var(t, 0);
            w.end_row();
        }
    }
}

// Explanation batch as written by `explain`, keyed by instance id.
struct Batch {
    std::vector<std::size_t> ids;
    std::map<std::size_t, CfTarget> targets;
    std::map<std::size_t, OutputDist> achieved;
    std::map<std::size_t, Matrix> x_cf;
};

std::size_t known_id(const std::string& field, const std::map<std::size_t, Matrix>& x_cf, const fs::path& file) {
    const auto id = csv::parse_int(field);
    if (id < 0 || !x_cf.contains(static_cast<std::size_t>(id)))
        throw FormatError(file.string() + " mentions unknown id " + field);
    return static_cast<std::size_t>(id);
}

Batch read_batch(const fs::path& dir, const synth::Dataset& ds, const ArchConfig& a) {
    const fs::path index = dir / "explanations.csv";
    require_file(index);
    Batch b;
    const Eigen::Index D = ds.channels(), T = ds.length();
    const csv::Table tab = csv::read(index);
    const std::size_t n_examples = ds.size() * (ds.kind == synth::DatasetKind::kPairs ? 2 : 1);
    for (const auto& row : tab.rows) {
        const auto id = csv::parse_int(row[tab.column("id")]);
        if (id < 0 || static_cast<std::size_t>(id) >= n_examples)
            throw ShapeError("explanation id " + row[tab.column("id")] + " is out of range");
        b.ids.push_back(static_cast<std::size_t>(id));
        b.x_cf[b.ids.back()] = read_xcf(dir, ds.kind, b.ids.back(), D, T);
    }

    const fs::path tpath = dir / "targets.csv", apath = dir / "achieved.csv";
    require_file(tpath);
    require_file(apath);
    const csv::Table tt = csv::read(tpath), at = csv::read(apath);
    if (a.classification()) {
        for (const auto& row : tt.rows)
            b.targets[known_id(row[tt.column("id")], b.x_cf, tpath)].label =
                static_cast<int>(csv::parse_int(row[tt.column("label")]));
        for (const auto& row : at.rows) {
            OutputDist d;
            d.probs.resize(a.num_classes);
            for (int k = 0; k < a.num_classes; ++k) d.probs[k] = csv::parse_double(row[at.column("p" + std::to_string(k))]);
            b.achieved[known_id(row[at.column("id")], b.x_cf, apath)] = d;
        }
    } else {
        for (std::size_t id : b.ids) {
            b.targets[id].sequence = Vector::Zero(T);
            OutputDist d;
            d.task = Task::kSequenceRegression;
            d.gauss = GaussianHead{Matrix::Zero(T, 1), Matrix::Zero(T, 1)};
            b.achieved[id] = d;
        }
        auto step = [&](const std::vector<std::string>& row, const csv::Table& tab, const fs::path& p) {
            const auto t = csv::parse_int(row[tab.column("t")]);
            if (t < 1 || t > T) throw FormatError(p.string() + ": t out of range");
            return static_cast<Eigen::Index>(t - 1);
        };
        for (const auto& row : tt.rows)
            b.targets[known_id(row[tt.column("id")], b.x_cf, tpath)].sequence[step(row, tt, tpath)] =
                csv::parse_double(row[tt.column("y_cf")]);
        for (const auto& row : at.rows) {
            OutputDist& d = b.achieved[known_id(row[at.column("id")], b.x_cf, apath)];
            const Eigen::Index t = step(row, at, apath);
            d.gauss.mean(t, 0) = csv::parse_double(row[at.column("mean")]);
            d.gauss.log_var(t, 0) = csv::parse_double(row[at.column("log_var")]);
        }
    }
    for (std::size_t id : b.ids)
        if (!b.targets.contains(id) || !b.achieved.contains(id))
            throw FormatError("explanation " + std::to_string(id) + " lacks a target or an achieved output");
    return b;
}

void check_model_fits(const ArchConfig& a, const synth::Dataset& ds) {
    if (a.D != ds.channels() || a.T_in != ds.length() || a.task != ds.task())
        throw ShapeError("model architecture does not match the dataset");
}

int cmd_gen(const RunConfig& c0, std::ostream& out) {
    RunConfig c = c0;
    const fs::path dir = require_path(c.out, "--out");
    const synth::Dataset ds = synth::generate(c.kind, c.generator);
    write_dataset(ds, dir);
    c.generator = synth::config_to_json(ds);
    write_run(dir, c);
    out << json{{"status", "ok"}, {"out", dir.string()}, {"n", ds.size()}}.dump() << "\n";
    return 0;
}

int cmd_train(const RunConfig& c0, std::ostream& out) {
    RunConfig c = c0;
    const synth::Dataset ds = synth::read_dataset(require_path(c.data, "--data"));
    const fs::path dir = require_path(c.out, "--out");
    check_model_fits(c.arch, ds);
    Validator validator;
    Examples val;
    if (!c.val_data.empty()) {
        const synth::Dataset vds = synth::read_dataset(c.val_data);
        check_model_fits(c.arch, vds);
        val = synth::to_examples(vds);
        validator = [&](const ModelParams& p) { return prediction_metric(p, val, c.metrics.mse_norm); };
    }
    const TrainResult r = train(synth::to_examples(ds), c.arch, c.train, validator);
    fs::create_directories(dir);
    c.model = (dir / "model.bin").string();
    save_model(r.params, c.model);

    // val_metric stays empty without --val-data.
    csv::Writer h(dir / "history.csv", {"epoch", "recon", "kl_z", "kl_u", "ent_y", "l_y", "total", "val_metric"});
    for (std::size_t e = 0; e < r.history.size(); ++e) {
        const LossBreakdown& l = r.history[e];
        h << static_cast<std::int64_t>(e + 1) << l.recon << l.kl_z << l.kl_u << l.ent_y << l.l_y << l.total;
        if (validator) {
            h << r.val_metric[e];
        } else {
            h << std::string();
        }
        h.end_row();
    }
    write_run(dir, c);
    out << json{{"status", "ok"}, {"model", c.model}, {"epochs", r.history.size()},
                {"final_loss", r.history.empty() ? 0.0 : r.history.back().total}}
               .dump()
        << "\n";
    return 0;
}

int cmd_explain(const RunConfig& c0, std::ostream& out) {
    RunConfig c = c0;
    const synth::Dataset ds = synth::read_dataset(require_path(c.data, "--data"));
    const fs::path mpath = model_file(require_path(c.model, "--model"));
    const fs::path dir = require_path(c.out, "--out");
    const ModelParams params = load_model(mpath);
    check_model_fits(params.arch(), ds);
    c.arch = params.arch();

    const Examples examples = synth::to_examples(ds);
    const std::vector<Prediction> predictions = predict_batch(params, examples);
    std::vector<std::size_t> ids(c.limit == 0 ? examples.size() : std::min(c.limit, examples.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const std::vector<CfTarget> targets = default_targets(ds, predictions, ids, c.target, c.metrics);
    const std::vector<ExplanationResult> results = explain_batch(params, examples, ids, targets, c.method, c.explain);

    fs::create_directories(dir);
    std::size_t converged = 0;
    {
        csv::Writer w(dir / "explanations.csv", {"id", "converged", "iterations", "final_discrepancy"});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            w << static_cast<std::int64_t>(ids[i]) << (results[i].converged ? 1 : 0) << results[i].iterations
              << results[i].final_discrepancy;
            w.end_row();
            converged += results[i].converged ? 1 : 0;
            write_xcf(dir, ds.kind, ids[i], results[i].x_cf);
        }
    }
    write_targets(dir, ids, targets, params.arch().classification());
    write_achieved(dir, ids, results, params.arch());
    c.model = mpath.string();
    write_run(dir, c);
    out << json{{"status", "ok"}, {"out", dir.string()}, {"explained", ids.size()}, {"converged", converged}}.dump()
        << "\n";
    return 0;
}

int cmd_eval(const RunConfig& c0, std::ostream& out) {
    RunConfig c = c0;
    const synth::Dataset ds = synth::read_dataset(require_path(c.data, "--data"));
    const fs::path mpath = model_file(require_path(c.model, "--model"));
    const fs::path edir = require_path(c.explanations, "--explanations");
    const fs::path dir = require_path(c.out, "--out");
    const ModelParams params = load_model(mpath);
    check_model_fits(params.arch(), ds);
    c.arch = params.arch();

    const Batch b = read_batch(edir, ds, params.arch());
    std::vector<EvalItem> items;
    for (std::size_t id : b.ids) items.push_back(EvalItem{id, b.x_cf.at(id), b.targets.at(id), b.achieved.at(id)});
    const MetricsReport r = evaluate(ds, predict_batch(params, synth::to_examples(ds)), items, c.metrics);

    fs::create_directories(dir);
    write_json_file(dir / "report.json", r.to_json());
    c.model = mpath.string();
    write_run(dir, c);
    out << r.to_json().dump() << "\n";
    return 0;
}

int cmd_export_plot(const RunConfig& c0, std::ostream& out) {
    RunConfig c = c0;
    const synth::Dataset ds = synth::read_dataset(require_path(c.data, "--data"));
    const fs::path mpath = model_file(require_path(c.model, "--model"));
    const fs::path edir = require_path(c.explanations, "--explanations");
    const fs::path dir = require_path(c.out, "--out");
    const ModelParams params = load_model(mpath);
    check_model_fits(params.arch(), ds);
    c.arch = params.arch();

    const Batch b = read_batch(edir, ds, params.arch());
    const Examples examples = synth::to_examples(ds);
    const std::vector<Prediction> predictions = predict_batch(params, examples);
    const bool cls = params.arch().classification();
    fs::create_directories(dir);
    for (std::size_t id : b.ids) {
        const Matrix& x = examples[id].x;
        const Matrix& x_cf = b.x_cf.at(id);
        const CfTarget& t = b.targets.at(id);
        csv::Writer w(dir / ("plot_" + std::to_string(id) + ".csv"),
                      {"id", "ch", "t", "x", "x_cf", "delta", "y_pred", "y_cf"});
        for (Eigen::Index ch = 0; ch < x.rows(); ++ch)
            for (Eigen::Index s = 0; s < x.cols(); ++s) {
                const double y_pred = cls ? predictions[id].label : predictions[id].sequence[s];
                const double y_cf = cls ? t.label : t.sequence[s];
                w << static_cast<std::int64_t>(id) << static_cast<std::int64_t>(ch) << static_cast<std::int64_t>(s + 1)
                  << x(ch, s) << x_cf(ch, s) << x_cf(ch, s) - x(ch, s) << y_pred << y_cf;
                w.end_row();
            }
    }
    c.model = mpath.string();
    write_run(dir, c);
    out << json{{"status", "ok"}, {"out", dir.string()}, {"plots", b.ids.size()}}.dump() << "\n";
    return 0;
}

int cmd_describe(const RunConfig& c, std::ostream& out) {
    const ModelParams params = load_model(model_file(require_path(c.model, "--model")));
    json tensors = json::array();
    for (const auto& t : params.tensors()) tensors.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
    out << json{{"arch", counts::to_json(params.arch())},
                {"parameter_count", params.parameter_count()},
                {"input_scale", params.input_scale()},
                {"tensors", tensors}}
               .dump(2)
        << "\n";
    return 0;
}

}  // namespace

json RunConfig::to_json() const {
    return json{{"command", command},
                {"kind", synth::to_string(kind)},
                {"seed", seed},
                {"paths",
                 {{"data", data}, {"val_data", val_data}, {"model", model}, {"out", out}, {"explanations", explanations}}},
                {"generator", generator},
                {"arch", counts::to_json(arch)},
                {"train", counts::to_json(train)},
                {"explain", counts::to_json(explain)},
                {"method", to_string(method)},
                {"target", target ? json(*target) : json(nullptr)},
                {"limit", limit},
                {"metrics", counts::to_json(metrics)}};
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Synthetic data, training and counterfactual explanation for CounTS time-series models", "counts"};
    app.require_subcommand(1);
    Flags f;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    add_common(gen, f);
    add(gen, f, "--kind", f.kind, "toy | spike | pairs")->check(CLI::IsMember({"toy", "spike", "pairs"}));
    add(gen, f, "--n", f.n, "instance count");
    add(gen, f, "--out", f.out, "output directory");

    CLI::App* tr = app.add_subcommand("train", "train a model; writes model.bin and history.csv");
    add_common(tr, f);
    add_io(tr, f, false, false);
    add_train(tr, f);

    CLI::App* ex = app.add_subcommand("explain", "write counterfactual explanations");
    add_common(ex, f);
    add_io(ex, f, true, false);
    add_explain(ex, f);

    CLI::App* ev = app.add_subcommand("eval", "evaluate an explanation batch; writes report.json");
    add_common(ev, f);
    add_io(ev, f, true, true);
    add(ev, f, "--shift", f.shift, "target shift in steps (spike)");
    add(ev, f, "--mse-norm", f.mse_norm, "per_step | per_instance")
        ->check(CLI::IsMember({"per_step", "per_instance"}));

    CLI::App* ep = app.add_subcommand("export-plot", "write per-instance CSV of x, x_cf, y_pred and y_cf");
    add_common(ep, f);
    add_io(ep, f, true, true);

    CLI::App* md = app.add_subcommand("model", "inspect a model file");
    md->require_subcommand(1);
    CLI::App* desc = md->add_subcommand("describe", "print architecture and tensor shapes");
    add_common(desc, f);
    add(desc, f, "--model", f.model, "model file or training output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        report_error(err, "usage", e.what());
        return 2;
    }

    try {
        std::string command;
        for (CLI::App* s : {gen, tr, ex, ev, ep, desc})
            if (s->parsed()) command = s == desc ? "model describe" : s->get_name();
        const RunConfig c = resolve(command, f);
        if (f.print_config) {
            out << c.to_json().dump(2) << "\n";
            return 0;
        }
        if (command == "gen") return cmd_gen(c, out);
        if (command == "train") return cmd_train(c, out);
        if (command == "explain") return cmd_explain(c, out);
        if (command == "eval") return cmd_eval(c, out);
        if (command == "export-plot") return cmd_export_plot(c, out);
        return cmd_describe(c, out);
    } catch (const MissingFileError& e) {
        report_error(err, e.kind(), e.what(), e.path());
        return exit_code(e);
    } catch (const Error& e) {
        report_error(err, e.kind(), e.what());
        return exit_code(e);
    } catch (const fs::filesystem_error& e) {
        report_error(err, "io", e.what(), e.path1().string());
        return 1;
    } catch (const std::exception& e) {
        report_error(err, "internal", e.what());
        return 1;
    }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv{"counts"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace counts::cli

#include "counts/csv.hpp"
#include "counts/error.hpp"
#include "counts/synthgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace counts::synth {

namespace fs = std::filesystem;
using nlohmann::json;

json config_to_json(const Dataset& ds) {
    switch (ds.kind) {
        case DatasetKind::kToy: {
            const auto& c = std::get<ToyConfig>(ds.config);
            return json{{"n", c.n}, {"seed", c.seed}, {"mu_x", c.mu_x}, {"sigma_x", c.sigma_x},
                        {"mu_u", c.mu_u}, {"sigma_u", c.sigma_u}};
        }
        case DatasetKind::kPairs: {
            const auto& c = std::get<PairConfig>(ds.config);
            return json{{"n", c.n}, {"seed", c.seed}, {"mu_x", c.mu_x}, {"sigma_x", c.sigma_x},
                        {"mu_u", c.mu_u}, {"sigma_u", c.sigma_u}};
        }
        case DatasetKind::kSpike: {
            const auto& c = std::get<SpikeConfig>(ds.config);
            return json{{"n", c.n},
                        {"seed", c.seed},
                        {"T", c.T},
                        {"D", c.D},
                        {"order_l", c.order_l},
                        {"alpha", c.alpha},
                        {"theta", c.theta},
                        {"noise_sigma", c.noise_sigma},
                        {"spike_rate", c.spike_rate},
                        {"spike_amp_mean", c.spike_amp_mean},
                        {"spike_amp_sigma", c.spike_amp_sigma},
                        {"initial_value", c.initial_value},
                        {"interaction", to_string(c.interaction)}};
        }
    }
    return json::object();
}

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void parse_config(Dataset& ds, const json& j) {
    switch (ds.kind) {
        case DatasetKind::kToy: {
            ToyConfig c;
            c.n = j.at("n").get<int>();
            c.seed = j.at("seed").get<std::uint64_t>();
            c.mu_x = get_or(j, "mu_x", c.mu_x);
            c.sigma_x = get_or(j, "sigma_x", c.sigma_x);
            c.mu_u = get_or(j, "mu_u", c.mu_u);
            c.sigma_u = get_or(j, "sigma_u", c.sigma_u);
            ds.config = c;
            break;
        }
        case DatasetKind::kPairs: {
            PairConfig c;
            c.n = j.at("n").get<int>();
            c.seed = j.at("seed").get<std::uint64_t>();
            c.mu_x = get_or(j, "mu_x", c.mu_x);
            c.sigma_x = get_or(j, "sigma_x", c.sigma_x);
            c.mu_u = get_or(j, "mu_u", c.mu_u);
            c.sigma_u = get_or(j, "sigma_u", c.sigma_u);
            ds.config = c;
            break;
        }
        case DatasetKind::kSpike: {
            SpikeConfig c;
            c.n = j.at("n").get<int>();
            c.seed = j.at("seed").get<std::uint64_t>();
            c.T = get_or(j, "T", c.T);
            c.D = get_or(j, "D", c.D);
            c.order_l = get_or(j, "order_l", c.order_l);
            c.alpha = get_or(j, "alpha", c.alpha);
            c.theta = get_or(j, "theta", c.theta);
            c.noise_sigma = get_or(j, "noise_sigma", c.noise_sigma);
            c.spike_rate = get_or(j, "spike_rate", c.spike_rate);
            c.spike_amp_mean = get_or(j, "spike_amp_mean", c.spike_amp_mean);
            c.spike_amp_sigma = get_or(j, "spike_amp_sigma", c.spike_amp_sigma);
            c.initial_value = get_or(j, "initial_value", c.initial_value);
            c.interaction = narma_interaction_from_string(get_or<std::string>(j, "interaction", "seed_window"));
            ds.config = c;
            break;
        }
    }
}

std::vector<std::string> toy_header(const char* second) {
    std::vector<std::string> h{"id"};
    if (second) h.emplace_back(second);
    for (int j = 0; j < kToyLength; ++j) h.push_back("x" + std::to_string(j));
    h.emplace_back("u");
    h.emplace_back("y");
    return h;
}

void write_toy_row(csv::Writer& w, std::int64_t id, const int* seg, const ToyInstance& inst) {
    w << id;
    if (seg) w << *seg;
    for (int j = 0; j < kToyLength; ++j) w << inst.x[j];
    w << inst.u << inst.y;
    w.end_row();
}

ToyInstance read_toy_row(const std::vector<std::string>& row, std::size_t first_x) {
    ToyInstance inst;
    inst.x.resize(kToyLength);
    for (int j = 0; j < kToyLength; ++j) inst.x[j] = csv::parse_double(row[first_x + j]);
    inst.u = csv::parse_double(row[first_x + kToyLength]);
    inst.y = static_cast<int>(csv::parse_int(row[first_x + kToyLength + 1]));
    if (inst.y != 0 && inst.y != 1) throw FormatError("toy label must be 0 or 1");
    inst.m = toy_mask();
    inst.z = inst.u * inst.m.cwiseProduct(inst.x);
    return inst;
}

void expect_rows(const csv::Table& t, std::size_t expected) {
    if (t.rows.size() != expected)
        throw ShapeError("data.csv has " + std::to_string(t.rows.size()) + " rows, manifest implies " +
                         std::to_string(expected));
}

void expect_id(const std::string& field, std::int64_t id) {
    if (csv::parse_int(field) != id) throw ShapeError("data.csv rows are not sorted by id");
}

}  // namespace

Dataset generate(DatasetKind kind, const json& config) {
    Dataset ds;
    ds.kind = kind;
    try {
        parse_config(ds, config);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("generator config: ") + e.what());
    }
    switch (kind) {
        case DatasetKind::kToy:
            return gen_toy(std::get<ToyConfig>(ds.config));
        case DatasetKind::kSpike:
            return gen_spike(std::get<SpikeConfig>(ds.config));
        case DatasetKind::kPairs:
            return gen_pairs(std::get<PairConfig>(ds.config));
    }
    throw ConfigError("unknown dataset kind");
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    json manifest{{"kind", to_string(ds.kind)},
                  {"n", ds.size()},
                  {"D", ds.channels()},
                  {"T", ds.length()},
                  {"seed", ds.seed()},
                  {"config", config_to_json(ds)},
                  {"version", kFormatVersion}};
    {
        std::ofstream out(dir / "manifest.json");
        if (!out) throw MissingFileError((dir / "manifest.json").string(), "cannot write manifest");
        out << manifest.dump(2) << '\n';
    }

    const fs::path data = dir / "data.csv";
    switch (ds.kind) {
        case DatasetKind::kToy: {
            csv::Writer w(data, toy_header(nullptr));
            for (std::size_t i = 0; i < ds.toy.size(); ++i)
                write_toy_row(w, static_cast<std::int64_t>(i), nullptr, ds.toy[i]);
            break;
        }
        case DatasetKind::kPairs: {
            csv::Writer w(data, toy_header("seg"));
            for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
                const int s0 = 0, s1 = 1;
                write_toy_row(w, static_cast<std::int64_t>(i), &s0, ds.pairs[i].first);
                write_toy_row(w, static_cast<std::int64_t>(i), &s1, ds.pairs[i].second);
            }
            break;
        }
        case DatasetKind::kSpike: {
            csv::Writer w(data, {"id", "ch", "t", "x", "y", "n_mask", "m_mask", "is_spike"});
            for (std::size_t i = 0; i < ds.spike.size(); ++i) {
                const SpikeInstance& s = ds.spike[i];
                for (Eigen::Index d = 0; d < s.x.rows(); ++d) {
                    const auto& times = s.spike_times[d];
                    for (Eigen::Index t = 0; t < s.x.cols(); ++t) {
                        const int stamp = static_cast<int>(t) + 1;
                        const bool spike = std::find(times.begin(), times.end(), stamp) != times.end();
                        w << static_cast<std::int64_t>(i) << static_cast<int>(d) << stamp << s.x(d, t)
                          << static_cast<int>(s.y[t]) << s.n_mask[d] << s.m_mask[d] << (spike ? 1 : 0);
                        w.end_row();
                    }
                }
            }
            break;
        }
    }
}

Dataset read_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw MissingFileError(manifest_path.string(), "missing " + manifest_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    if (!manifest.contains("version") || manifest.at("version").get<int>() != kFormatVersion)
        throw VersionError("unsupported dataset format version " +
                           (manifest.contains("version") ? manifest.at("version").dump() : std::string("<none>")));

    Dataset ds;
    std::size_t n = 0;
    int D = 0, T = 0;
    try {
        ds.kind = dataset_kind_from_string(manifest.at("kind").get<std::string>());
        n = manifest.at("n").get<std::size_t>();
        D = manifest.at("D").get<int>();
        T = manifest.at("T").get<int>();
        parse_config(ds, manifest.at("config"));
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }
    if (ds.seed() != manifest.at("seed").get<std::uint64_t>()) throw FormatError("manifest seed disagrees with config");

    const csv::Table table = csv::read(dir / "data.csv");
    switch (ds.kind) {
        case DatasetKind::kToy: {
            if (table.header != toy_header(nullptr)) throw FormatError("unexpected toy data.csv header");
            if (D != 1 || T != kToyLength) throw ShapeError("toy manifest must have D=1, T=12");
            expect_rows(table, n);
            ds.toy.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                expect_id(table.rows[i][0], static_cast<std::int64_t>(i));
                ds.toy.push_back(read_toy_row(table.rows[i], 1));
            }
            break;
        }
        case DatasetKind::kPairs: {
            if (table.header != toy_header("seg")) throw FormatError("unexpected pairs data.csv header");
            expect_rows(table, 2 * n);
            ds.pairs.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto& r0 = table.rows[2 * i];
                const auto& r1 = table.rows[2 * i + 1];
                expect_id(r0[0], static_cast<std::int64_t>(i));
                expect_id(r1[0], static_cast<std::int64_t>(i));
                if (r0[1] != "0" || r1[1] != "1") throw ShapeError("pair rows must be ordered seg 0, seg 1");
                ds.pairs.push_back(PairInstance{read_toy_row(r0, 2), read_toy_row(r1, 2)});
            }
            break;
        }
        case DatasetKind::kSpike: {
            const std::vector<std::string> header{"id", "ch", "t", "x", "y", "n_mask", "m_mask", "is_spike"};
            if (table.header != header) throw FormatError("unexpected spike data.csv header");
            const auto& cfg = std::get<SpikeConfig>(ds.config);
            if (cfg.D != D || cfg.T != T) throw ShapeError("manifest D/T disagree with config");
            expect_rows(table, n * static_cast<std::size_t>(D) * static_cast<std::size_t>(T));
            ds.spike.reserve(n);
            std::size_t r = 0;
            for (std::size_t i = 0; i < n; ++i) {
                SpikeInstance s;
                s.x.resize(D, T);
                s.y = Vector::Zero(T);
                s.n_mask.assign(D, 0);
                s.m_mask.assign(D, 0);
                s.spike_times.assign(D, {});
                for (int d = 0; d < D; ++d) {
                    for (int t = 0; t < T; ++t, ++r) {
                        const auto& row = table.rows[r];
                        expect_id(row[0], static_cast<std::int64_t>(i));
                        if (csv::parse_int(row[1]) != d || csv::parse_int(row[2]) != t + 1)
                            throw ShapeError("spike rows must be sorted by (id, ch, t)");
                        s.x(d, t) = csv::parse_double(row[3]);
                        const double y = static_cast<double>(csv::parse_int(row[4]));
                        if (d == 0) {
                            s.y[t] = y;
                        } else if (s.y[t] != y) {
                            throw FormatError("label differs across channels of one instance");
                        }
                        s.n_mask[d] = static_cast<int>(csv::parse_int(row[5]));
                        s.m_mask[d] = static_cast<int>(csv::parse_int(row[6]));
                        if (csv::parse_int(row[7]) == 1) s.spike_times[d].push_back(t + 1);
                    }
                }
                ds.spike.push_back(std::move(s));
            }
            break;
        }
    }
    return ds;
}

}  // namespace counts::synth

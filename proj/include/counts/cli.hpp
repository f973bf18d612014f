#pragma once

// Command-line front end: gen, train, explain, eval, export-plot and
// `model describe`. Errors are reported as one JSON line on `err`.
//
// Exit codes: 0 ok, 1 other, 2 usage, 3 missing file, 4 invalid config,
// 5 bad format or shape, 6 numeric failure.

#include "counts/counterfactual.hpp"
#include "counts/metrics.hpp"
#include "counts/objective.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace counts::cli {

// Fully resolved configuration of one invocation; echoed as run.json.
struct RunConfig {
    std::string command;
    synth::DatasetKind kind = synth::DatasetKind::kToy;
    std::uint64_t seed = 0;
    std::string data, val_data, model, out, explanations;
    nlohmann::json generator;
    ArchConfig arch;
    TrainConfig train;
    ExplainConfig explain;
    Method method = Method::kCounts;
    std::optional<int> target;
    std::size_t limit = 0;  // explain the first `limit` instances; 0 means all
    MetricOptions metrics;

    nlohmann::json to_json() const;
};

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace counts::cli

#include "../common/tempdir.hpp"

#include "counts/cli.hpp"
#include "counts/synthgen.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <sstream>

using namespace counts;
using counts::testing::slurp;
using counts::testing::spit;
using counts::testing::TempDir;
using nlohmann::json;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome invoke(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return Outcome{code, out.str(), err.str()};
}

std::string str(const std::filesystem::path& p) { return p.string(); }

// Small toy pipeline: dataset, trained model and explanations under `dir`.
void toy_pipeline(const TempDir& dir) {
    REQUIRE(invoke({"gen", "--kind", "toy", "--n", "80", "--seed", "3", "--out", str(dir / "data")}).code == 0);
    REQUIRE(invoke({"train", "--data", str(dir / "data"), "--out", str(dir / "model"), "--epochs", "2", "--batch-size",
                 "32", "--seed", "4"})
                .code == 0);
    REQUIRE(invoke({"explain", "--data", str(dir / "data"), "--model", str(dir / "model"), "--out", str(dir / "cf"),
                 "--limit", "4", "--max-iters", "20"})
                .code == 0);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen is reproducible") {
    TempDir dir;
    for (const char* kind : {"toy", "spike", "pairs"}) {
        const std::string a = str(dir / (std::string(kind) + "_a")), b = str(dir / (std::string(kind) + "_b"));
        CHECK(invoke({"gen", "--kind", kind, "--n", "6", "--seed", "9", "--out", a}).code == 0);
        CHECK(invoke({"gen", "--kind", kind, "--n", "6", "--seed", "9", "--out", b}).code == 0);
        // run.json differs only in its output path.
        for (const char* f : {"data.csv", "manifest.json"})
            CHECK(slurp(std::filesystem::path(a) / f) == slurp(std::filesystem::path(b) / f));
        CHECK(std::filesystem::exists(std::filesystem::path(a) / "run.json"));
    }
}

TEST_CASE("toy pipeline writes every artifact") {
    TempDir dir;
    toy_pipeline(dir);
    const std::string data_before = slurp(dir / "data" / "data.csv");
    const Outcome e = invoke({"eval", "--data", str(dir / "data"), "--model", str(dir / "model"), "--explanations",
                           str(dir / "cf"), "--out", str(dir / "report")});
    REQUIRE(e.code == 0);
    const json r = json::parse(slurp(dir / "report" / "report.json"));
    for (const char* key : {"task", "prediction_accuracy", "counterfactual_accuracy", "ccr", "ccr_variant",
                            "n_evaluated", "n_skipped_degenerate"})
        CHECK(r.contains(key));
    CHECK(r["n_evaluated"].get<int>() + r["n_skipped_degenerate"].get<int>() == 4);
    CHECK(json::parse(e.out) == r);

    CHECK(invoke({"export-plot", "--data", str(dir / "data"), "--model", str(dir / "model"), "--explanations",
               str(dir / "cf"), "--out", str(dir / "plots")})
              .code == 0);
    CHECK(std::filesystem::exists(dir / "plots" / "plot_0.csv"));
    CHECK(slurp(dir / "plots" / "plot_3.csv").rfind("id,ch,t,x,x_cf,delta,y_pred,y_cf\n", 0) == 0);

    for (const char* sub : {"data", "model", "cf", "report", "plots"}) CHECK(std::filesystem::exists(dir / sub / "run.json"));
    for (const char* f : {"explanations.csv", "targets.csv", "achieved.csv", "xcf_0.csv"})
        CHECK(std::filesystem::exists(dir / "cf" / f));
    CHECK(slurp(dir / "model" / "history.csv").rfind("epoch,recon,kl_z,kl_u,ent_y,l_y,total,val_metric\n", 0) == 0);
    CHECK(slurp(dir / "data" / "data.csv") == data_before);

    const Outcome d = invoke({"model", "describe", "--model", str(dir / "model")});
    REQUIRE(d.code == 0);
    CHECK(json::parse(d.out)["parameter_count"].get<int>() > 0);
}

TEST_CASE("explain is deterministic") {
    TempDir dir;
    toy_pipeline(dir);
    REQUIRE(invoke({"explain", "--data", str(dir / "data"), "--model", str(dir / "model"), "--out", str(dir / "cf2"),
                 "--limit", "4", "--max-iters", "20"})
                .code == 0);
    for (const char* f : {"explanations.csv", "targets.csv", "achieved.csv", "xcf_2.csv"})
        CHECK(slurp(dir / "cf" / f) == slurp(dir / "cf2" / f));
}

TEST_CASE("validation data fills the history column") {
    TempDir dir;
    REQUIRE(invoke({"gen", "--kind", "toy", "--n", "40", "--out", str(dir / "train")}).code == 0);
    REQUIRE(invoke({"gen", "--kind", "toy", "--n", "20", "--seed", "1", "--out", str(dir / "val")}).code == 0);
    REQUIRE(invoke({"train", "--data", str(dir / "train"), "--val-data", str(dir / "val"), "--out", str(dir / "m"),
                 "--epochs", "1"})
                .code == 0);
    std::istringstream h(slurp(dir / "m" / "history.csv"));
    std::string line;
    std::getline(h, line);
    std::getline(h, line);
    CHECK(line.back() != ',');
}

TEST_CASE("eval without explanations fails with the path") {
    TempDir dir;
    toy_pipeline(dir);
    const Outcome o = invoke({"eval", "--data", str(dir / "data"), "--model", str(dir / "model"), "--explanations",
                           str(dir / "absent"), "--out", str(dir / "report")});
    CHECK(o.code == 3);
    CHECK(o.err.find("absent") != std::string::npos);
    CHECK(json::parse(o.err)["error"].is_string());
}

TEST_CASE("exit codes") {
    TempDir dir;
    CHECK(invoke({}).code == 2);
    CHECK(invoke({"gen", "--kind", "weather"}).code == 2);
    CHECK(invoke({"gen", "--kind", "toy"}).code == 2);  // no --out
    CHECK(invoke({"train", "--data", str(dir / "nothing"), "--out", str(dir / "m")}).code == 3);

    spit(dir / "bad.json", R"({"train": {"epochs": -1}})");
    CHECK(invoke({"gen", "--config", str(dir / "bad.json"), "--out", str(dir / "g")}).code == 4);
    spit(dir / "broken.json", "{");
    CHECK(invoke({"gen", "--config", str(dir / "broken.json"), "--out", str(dir / "g")}).code == 4);

    REQUIRE(invoke({"gen", "--kind", "toy", "--n", "10", "--out", str(dir / "toy")}).code == 0);
    REQUIRE(invoke({"gen", "--kind", "spike", "--n", "2", "--out", str(dir / "spike")}).code == 0);
    REQUIRE(invoke({"train", "--data", str(dir / "toy"), "--out", str(dir / "m"), "--epochs", "1"}).code == 0);
    // A toy model cannot explain spike data.
    CHECK(invoke({"explain", "--data", str(dir / "spike"), "--model", str(dir / "m"), "--out", str(dir / "cf")}).code == 5);
    spit(dir / "m" / "model.bin", "garbage");
    CHECK(invoke({"model", "describe", "--model", str(dir / "m")}).code == 5);
}

TEST_CASE("print-config resolves flags over the file") {
    TempDir dir;
    spit(dir / "run.json", R"({"seed": 5, "train": {"epochs": 7, "batch_size": 16}, "explain": {"m_u": 3}})");
    const Outcome o = invoke({"train", "--config", str(dir / "run.json"), "--epochs", "2", "--print-config"});
    REQUIRE(o.code == 0);
    const json c = json::parse(o.out);
    CHECK(c["seed"] == 5);
    CHECK(c["train"]["epochs"] == 2);
    CHECK(c["train"]["batch_size"] == 16);
    CHECK(c["explain"]["m_u"] == 3);
    CHECK(c["command"] == "train");
    CHECK_FALSE(std::filesystem::exists(dir / "m"));

    const Outcome s = invoke({"explain", "--print-config", "--config", str(dir / "run.json"), "--method", "rgd"});
    REQUIRE(s.code == 0);
    CHECK(json::parse(s.out)["method"] == "rgd");
}

TEST_CASE("run.json replays gen") {
    TempDir dir;
    REQUIRE(invoke({"gen", "--kind", "spike", "--n", "3", "--seed", "2", "--out", str(dir / "a")}).code == 0);
    json run = json::parse(slurp(dir / "a" / "run.json"));
    CHECK(run["kind"] == "spike");
    run["paths"]["out"] = str(dir / "b");
    spit(dir / "replay.json", run.dump());
    REQUIRE(invoke({"gen", "--config", str(dir / "replay.json")}).code == 0);
    CHECK(slurp(dir / "a" / "data.csv") == slurp(dir / "b" / "data.csv"));
}

TEST_CASE("binary smoke test") {
    TempDir dir;
    const std::string exe = COUNTS_CLI_PATH;
    const std::string cmd = "\"" + exe + "\" gen --kind toy --n 5 --out \"" + str(dir / "d") + "\" > \"" +
                            str(dir / "stdout.txt") + "\"";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(json::parse(slurp(dir / "stdout.txt"))["n"] == 5);
    const std::string help = "\"" + exe + "\" --help > \"" + str(dir / "help.txt") + "\"";
    CHECK(std::system(help.c_str()) == 0);
    CHECK(slurp(dir / "help.txt").find("explain") != std::string::npos);
}

}  // TEST_SUITE

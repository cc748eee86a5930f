#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nodule/cli.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = nodule::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace

TEST(Cli, PhantomWritesManifest) {
    TempDir dir("cli");
    const auto r = run({"phantom", "--n-sure", "40", "--n-unsure", "60", "--side", "32", "--seed", "7", "--out",
                        (dir / "raw").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "raw/manifest.jsonl"));
    const auto cfg = nlohmann::json::parse(slurp(dir / "raw/run-config.json"));
    EXPECT_EQ(cfg.at("command"), "phantom");
    EXPECT_EQ(cfg.at("options").at("seed"), 7);
    EXPECT_EQ(cfg.at("options").at("side"), 32);
}

TEST(Cli, UsageErrors) {
    const auto missing = run({"train"});
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.err.find("Usage"), std::string::npos);
    EXPECT_EQ(run({"phantom", "--bogus", "1"}).code, 2);
    EXPECT_EQ(run({"nonsense"}).code, 2);
    EXPECT_EQ(run({}).code, 2);
}

TEST(Cli, RuntimeErrorIsOneLine) {
    TempDir dir("cli");
    const auto r = run({"ingest", "--manifest", (dir / "absent.jsonl").string(), "--out", (dir / "x").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, FullPipeline) {
    TempDir dir("cli");
    auto p = [&](const char* rel) { return (dir / rel).string(); };
    ASSERT_EQ(run({"phantom", "--n-sure", "40", "--n-unsure", "30", "--side", "16", "--seed", "3", "--out", p("raw")}).code, 0);
    ASSERT_EQ(run({"ingest", "--manifest", p("raw/manifest.jsonl"), "--out", p("ing")}).code, 0);
    ASSERT_EQ(run({"preprocess", "--data", p("ing"), "--side", "16", "--out", p("pre")}).code, 0);
    const auto t = run({"train", "--data", p("pre"), "--side", "16", "--seed", "3", "--epochs", "2", "--folds", "2",
                        "--channel-divisor", "4", "--out", p("run")});
    ASSERT_EQ(t.code, 0) << t.err;
    for (const char* f : {"run/log.csv", "run/fold_0/best.ckpt", "run/fold_1/db.jsonl", "run/fold_1/split.json",
                          "run/run-config.json"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    const auto e = run({"evaluate", "--ckpt", p("run"), "--data", p("pre"), "--out", p("eval")});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto metrics = nlohmann::json::parse(slurp(dir / "eval/metrics.json"));
    EXPECT_EQ(metrics.at("folds").size(), 2u);
    EXPECT_TRUE(metrics.at("summary").at("retrieval").contains("concat"));
    EXPECT_FALSE(fs::is_empty(dir / "eval/cam"));

    const auto d = run({"diagnose", "--ckpt", p("run/fold_0/best.ckpt"), "--db", p("run/fold_0/db.jsonl"), "--input",
                        p("pre/patches/sure_0001.bin"), "--mode", "concat", "--k", "5", "--report", p("rep/r.html"),
                        "--data", p("pre")});
    ASSERT_EQ(d.code, 0) << d.err;
    EXPECT_EQ(d.out.rfind("diag ", 0), 0u);
    EXPECT_NE(slurp(dir / "rep/r.html").find("sure_"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "rep/run-config.json"));

    const auto rr = run({"relabel-report", "--ckpt", p("run/fold_0/best.ckpt"), "--db", p("run/fold_0/db.jsonl"),
                         "--data", p("pre"), "--k", "5", "--out", p("relabel")});
    ASSERT_EQ(rr.code, 0) << rr.err;
    EXPECT_EQ(nlohmann::json::parse(slurp(dir / "relabel/relabel.json")).at("buckets").size(), 5u);
}

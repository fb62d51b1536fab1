#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "pace/cli.hpp"
#include "pace/model.hpp"

namespace fs = std::filesystem;

namespace {

struct Out {
    int code;
    std::string out, err;
};

Out call(const std::vector<std::string>& args) {
    std::ostringstream o, e;
    int code = pace::cli::run(args, o, e);
    return {code, o.str(), e.str()};
}

fs::path scratch() {
    fs::path d = fs::temp_directory_path() / "pace_cli_test";
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("cli usage errors exit 2") {
    CHECK(call({}).code == 2);
    CHECK(call({"bogus"}).code == 2);
    CHECK(call({"train", "--no-such-flag"}).code == 2);
    CHECK(call({"predict", "--checkpoint", "x"}).code == 2);
    CHECK(call({"predict", "--checkpoint", "x", "-i", "y", "--format", "pdb"}).code == 2);
    CHECK(call({"--help"}).code == 0);
}

TEST_CASE("cli runtime errors exit 1 with one line") {
    auto r = call({"eval", "--checkpoint", "/nonexistent.ckpt", "--data", "/nonexistent.xyz"});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error: ", 0) == 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("cli pipeline") {
    const fs::path d = scratch();
    const std::string data = (d / "data.xyz").string(), ckpt = (d / "m.ckpt").string(),
                      cache = (d / "data.bin").string();
    REQUIRE(call({"synth", "--n", "6", "--seed", "3", "-o", data}).code == 0);
    auto pre = call({"preprocess", "-i", data, "-o", cache, "--stats", (d / "stats.json").string()});
    REQUIRE(pre.code == 0);
    CHECK(fs::exists(d / "stats.json"));

    // Zero epochs emits the initial checkpoint.
    auto t0 = call({"train", "--train", cache, "-o", ckpt, "--epochs", "0", "--channels", "4", "--l-max", "2",
                    "--v-max", "2", "--mlp-hidden", "8", "--n-basis", "4", "-q"});
    REQUIRE(t0.code == 0);
    CHECK(fs::exists(ckpt));
    auto t1 = call({"train", "--train", cache, "-o", ckpt, "--epochs", "1", "--batch-size", "3", "--channels", "4",
                    "--l-max", "2", "--v-max", "2", "--mlp-hidden", "8", "--n-basis", "4", "--no-edge-booster",
                    "--metrics", (d / "m.csv").string(), "-q"});
    REQUIRE(t1.code == 0);
    pace::Model m = pace::load_checkpoint(ckpt);
    CHECK(!m.config().edge_booster);
    CHECK(m.config().l_hidden == 2);

    auto ins = call({"inspect-checkpoint", ckpt, "--tensors"});
    CHECK(ins.code == 0);
    CHECK(ins.out.find("\"channels\": 4") != std::string::npos);
    CHECK(ins.out.find("layer1.contraction") != std::string::npos);

    // Predictions evaluated against themselves give a zero table.
    const std::string pred = (d / "pred.xyz").string();
    REQUIRE(call({"predict", "--checkpoint", ckpt, "-i", data, "-o", pred}).code == 0);
    auto ev = call({"eval", "--checkpoint", ckpt, "--data", pred, "--json"});
    REQUIRE(ev.code == 0);
    auto j = nlohmann::json::parse(ev.out);
    CHECK(j["energy_mae_meV"].get<double>() < 1e-6);
    CHECK(j["force_rmse_meV_per_A"].get<double>() < 1e-6);
    auto csv = call({"predict", "--checkpoint", ckpt, "-i", data, "--format", "csv"});
    CHECK(csv.out.rfind("frame,atom,element", 0) == 0);

    const std::string traj = (d / "traj.xyz").string();
    auto md = call({"md", "--analytic", "6,8", "-i", data, "--steps", "20", "--stride", "5", "-o", traj});
    REQUIRE(md.code == 0);
    auto mdm = call({"md", "--checkpoint", ckpt, "-i", data, "--steps", "4", "--stride", "2", "-o",
                     (d / "traj2.xyz").string()});
    CHECK(mdm.code == 0);
    CHECK(call({"md", "-i", data}).code == 2);
    auto rd = call({"rdf", "-i", traj, "--dr", "0.1", "--r-max", "4"});
    REQUIRE(rd.code == 0);
    CHECK(rd.out.find("r_lo,r_mid,g,count") != std::string::npos);
}

TEST_CASE("cli presets, cg-dump and selfcheck") {
    const fs::path d = scratch();
    auto cg = call({"cg-dump", "--l1", "1", "--l2", "1", "--l3", "0"});
    CHECK(cg.code == 0);
    CHECK(cg.out.find("-1,-1,0,0.57735026918962") != std::string::npos);
    CHECK(call({"cg-dump", "--path", "1,1,0"}).code == 0);
    CHECK(call({"cg-dump", "--path", "1,1"}).code == 1);

    const std::string data = (d / "p.xyz").string();
    REQUIRE(call({"synth", "--n", "2", "-o", data}).code == 0);
    auto bad = call({"train", "--preset", "no_such_preset", "--train", data});
    CHECK(bad.code == 1);
    auto pr = call({"train", "--preset", "aspirin", "--train", data, "--epochs", "0", "--channels", "2", "-o",
                    (d / "a.ckpt").string(), "-q"});
    REQUIRE(pr.code == 0);
    pace::Model a = pace::load_checkpoint(d / "a.ckpt");
    CHECK(a.config().radial.n_basis == 6);
    CHECK(a.config().channels == 2);

    auto sc = call({"selfcheck"});
    CHECK(sc.code == 0);
    CHECK(sc.out.find("FAIL") == std::string::npos);
}

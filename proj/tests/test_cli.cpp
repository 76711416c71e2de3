#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "critmap/model_io.hpp"
#include "critmap/trainer.hpp"

using namespace critmap;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "critmap");
    std::ostringstream out, err;
    Run r;
    r.code = cli::run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

/// Fresh scratch directory removed when the test case ends.
struct Scratch {
    fs::path dir;
    Scratch() {
        static int counter = 0;
        dir = fs::temp_directory_path() /
              ("critmap_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

CriticalityProfile make_profile(const std::string& id, std::vector<double> means, double clean_accuracy,
                                std::vector<std::string> layers = {"stem.conv", "stage1.block0.conv1", "head.fc"}) {
    CriticalityProfile p;
    p.model_id = id;
    p.clean_accuracy = clean_accuracy;
    for (std::size_t i = 0; i < layers.size(); ++i)
        p.entries.push_back(summarize(layers[i], {means[i], means[i] + 0.01, means[i] - 0.01}));
    return p;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("eps parsing") {
    CHECK(cli::parse_eps("8/255") == doctest::Approx(8.0 / 255.0).epsilon(1e-15));
    CHECK(cli::parse_eps("8/255", "255") == doctest::Approx(8.0 / 255.0).epsilon(1e-15));
    CHECK(cli::parse_eps("8", "255") == doctest::Approx(8.0 / 255.0).epsilon(1e-15));
    CHECK(cli::parse_eps("0.03") == 0.03);
    CHECK(cli::parse_eps("0") == 0.0);
    CHECK_THROWS(cli::parse_eps("-1"));
    CHECK_THROWS(cli::parse_eps("abc"));
    CHECK_THROWS(cli::parse_eps("1/0"));
    CHECK_THROWS(cli::parse_eps("0.1", "percent"));
}

TEST_CASE("synth-data is balanced and byte-reproducible") {
    Scratch s;
    const std::vector<std::string> args{"synth-data", "--n", "103", "--classes", "4", "--seed", "3", "--out"};
    auto a = args, b = args, c = args;
    a.push_back(s / "a.lcd");
    b.push_back(s / "b.lcd");
    c.push_back(s / "c.lcd");
    c[6] = "4";
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    REQUIRE(run(c).code == 0);
    CHECK(slurp(s / "a.lcd") == slurp(s / "b.lcd"));
    CHECK(slurp(s / "a.lcd") != slurp(s / "c.lcd"));

    const Dataset d = io::load_dataset(s / "a.lcd");
    CHECK(d.size() == 103);
    std::vector<int> per_class(4, 0);
    for (int y : d.labels) ++per_class[y];
    CHECK(per_class == std::vector<int>{26, 26, 26, 25});
    for (double v : d.images.data<float>()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("a linear probe separates large-margin synthetic data") {
    Scratch s;
    REQUIRE(run({"synth-data", "--n", "256", "--margin", "1.0", "--noise", "0.1", "--seed", "1", "--out",
                 s / "d.lcd"})
                .code == 0);
    const Dataset d = io::load_dataset(s / "d.lcd");
    TrainConfig tc;
    tc.epochs = 15;
    tc.batch_size = 32;
    tc.lr = 0.01;
    const auto r = train(build_linear_model(d.sample_shape(), d.num_classes, 0), d, tc);
    CHECK(evaluate_accuracy(r.model, d) >= 0.99);
}

TEST_CASE("exit codes") {
    Scratch s;
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"profile", "--data", "x"}).code == 2);
    CHECK(run({"synth-data", "--n", "-4", "--out", s / "x.lcd"}).code == 2);
    CHECK(run({"train", "--data", s / "missing.lcd", "--out", s / "m.lcm"}).code == 1);
    CHECK(run({"train", "--data", s / "missing.lcd", "--out", s / "m.lcm", "--eps", "nope"}).code == 2);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"--version"}).out.find("0.1.0") != std::string::npos);

    REQUIRE(run({"synth-data", "--n", "16", "--out", s / "d.lcd"}).code == 0);
    std::ofstream(s / "junk.lcm") << "not a model";
    const Run bad = run({"profile", "--model", s / "junk.lcm", "--data", s / "d.lcd", "--out", s / "p.json"});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("error") != std::string::npos);
}

TEST_CASE("train then profile twice gives identical files") {
    Scratch s;
    REQUIRE(run({"synth-data", "--n", "48", "--seed", "2", "--out", s / "d.lcd"}).code == 0);
    REQUIRE(run({"train", "--data", s / "d.lcd", "--out", s / "m.lcm", "--epochs", "1", "--batch-size", "16"}).code ==
            0);
    CHECK(fs::exists(s / "m.lcm.log.csv"));
    CHECK(slurp(s / "m.lcm.log.csv").rfind("epoch,split,loss,accuracy\n", 0) == 0);
    CHECK(io::load_model(s / "m.lcm").name() == "m");

    const std::vector<std::string> base{"profile", "--model", s / "m.lcm", "--data", s / "d.lcd", "--samples", "32",
                                        "--seed", "5"};
    auto a = base, b = base;
    a.insert(a.end(), {"--out", s / "a.json", "--csv", s / "a.csv", "--jobs", "1", "--eval-batch-size", "8"});
    b.insert(b.end(), {"--out", s / "b.json", "--csv", s / "b.csv", "--jobs", "3", "--eval-batch-size", "32"});
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    // The batch size is part of the recorded config, so compare everything else.
    auto pa = io::load_profile(s / "a.json"), pb = io::load_profile(s / "b.json");
    CHECK(pa.entries == pb.entries);
    CHECK(pa.clean_accuracy == pb.clean_accuracy);
    CHECK(slurp(s / "a.csv") == slurp(s / "b.csv"));
    CHECK(pa.entries.size() == 16);
    CHECK(pa.model_id == "m");

    auto c = base;
    c.insert(c.end(), {"--out", s / "c.json", "--jobs", "1", "--eval-batch-size", "8"});
    REQUIRE(run(c).code == 0);
    CHECK(slurp(s / "a.json") == slurp(s / "c.json"));

    CHECK(run({"profile", "--model", s / "m.lcm", "--data", s / "d.lcd", "--samples", "49", "--out", s / "x.json"})
              .code == 2);
}

TEST_CASE("report formats and views") {
    Scratch s;
    io::save_profile(make_profile("std", {0.9, 0.2, 0.5}, 0.95), s / "std.json");
    io::save_profile(make_profile("adv", {0.7, 0.4, 0.5}, 0.80), s / "adv.json");
    const std::vector<std::string> profiles{"--profiles", s / "std.json", s / "adv.json"};

    auto csv = profiles;
    csv.insert(csv.begin(), "report");
    csv.insert(csv.end(), {"--format", "csv", "--out", s / "r.csv"});
    REQUIRE(run(csv).code == 0);
    const std::string table = slurp(s / "r.csv");
    CHECK(table.rfind("model_id,layer_id,mean,std,stderr\n", 0) == 0);
    CHECK(count(table, "\n") == 7);

    auto svg = profiles;
    svg.insert(svg.begin(), "report");
    svg.insert(svg.end(), {"--format", "svg", "--out", s / "r.svg"});
    REQUIRE(run(svg).code == 0);
    const std::string image = slurp(s / "r.svg");
    CHECK(count(image, "class=\"cell\"") == 6);
    CHECK(count(image, "class=\"row-marginal\"") == 2);
    CHECK(count(image, "class=\"col-marginal\"") == 3);

    auto delta = profiles;
    delta.insert(delta.begin(), "report");
    delta.insert(delta.end(), {"--format", "json", "--view", "delta", "--baseline", "std", "--out", s / "d.json"});
    REQUIRE(run(delta).code == 0);
    const json j = json::parse(slurp(s / "d.json"));
    for (double v : j["models"][0]["values"]) CHECK(v == 0.0);
    CHECK(j["models"][1]["values"][0].get<double>() == doctest::Approx(-0.2));

    auto no_base = profiles;
    no_base.insert(no_base.begin(), "report");
    no_base.insert(no_base.end(), {"--view", "delta", "--out", s / "x.svg"});
    CHECK(run(no_base).code == 2);

    io::save_profile(make_profile("odd", {0.1, 0.2}, 0.5, {"stem.conv", "head.fc"}), s / "odd.json");
    CHECK(run({"report", "--profiles", s / "std.json", s / "odd.json", "--out", s / "x.svg"}).code == 1);
}

TEST_CASE("correlate reports the rank correlation or a null with a warning") {
    Scratch s;
    io::save_profile(make_profile("a", {0.1, 0.1, 0.1}, 0.5), s / "a.json");
    io::save_profile(make_profile("b", {0.2, 0.2, 0.2}, 0.6), s / "b.json");
    io::save_profile(make_profile("c", {0.3, 0.3, 0.3}, 0.9), s / "c.json");
    io::save_profile(make_profile("d", {0.4, 0.4, 0.4}, 0.1), s / "d.json");

    Run up = run({"correlate", "--profiles", s / "a.json", s / "b.json", s / "c.json", "--out", s / "up.csv"});
    REQUIRE(up.code == 0);
    CHECK(up.out == "spearman_r=1\n");
    const std::string scatter = slurp(s / "up.csv");
    CHECK(scatter.rfind("model_id,mean_criticality,clean_accuracy\n", 0) == 0);
    CHECK(count(scatter, "\n") == 4);

    io::save_profile(make_profile("e", {0.5, 0.5, 0.5}, 0.05), s / "e.json");
    Run down = run({"correlate", "--profiles", s / "d.json", s / "e.json", s / "a.json", "--out", s / "dn.csv"});
    REQUIRE(down.code == 0);
    CHECK(down.out == "spearman_r=-1\n");

    io::save_profile(make_profile("f", {0.2, 0.2, 0.2}, 0.5), s / "f.json");
    Run flat = run({"correlate", "--profiles", s / "a.json", s / "f.json", "--out", s / "fl.csv"});
    REQUIRE(flat.code == 0);
    CHECK(flat.out == "spearman_r=null\n");
    CHECK(flat.err.find("warning") != std::string::npos);
    const json m = json::parse(slurp(s / "fl.csv.manifest.json"));
    CHECK(m["result"]["spearman_r"].is_null());
}

TEST_CASE("every command writes a run manifest") {
    Scratch s;
    REQUIRE(run({"synth-data", "--n", "8", "--seed", "1", "--out", s / "a.lcd"}).code == 0);
    REQUIRE(run({"synth-data", "--n", "8", "--seed", "1", "--out", s / "b.lcd"}).code == 0);
    REQUIRE(run({"synth-data", "--n", "8", "--seed", "2", "--out", s / "c.lcd"}).code == 0);
    const json a = json::parse(slurp(s / "a.lcd.manifest.json"));
    const json b = json::parse(slurp(s / "b.lcd.manifest.json"));
    const json c = json::parse(slurp(s / "c.lcd.manifest.json"));
    CHECK(a["command"] == "synth-data");
    CHECK(a["command_line"].get<std::string>().find("--seed 1") != std::string::npos);
    CHECK(a["tool_version"] == "0.1.0");
    CHECK(a["wall_time_seconds"].get<double>() >= 0.0);
    CHECK(a["outputs"] == json::array({s / "a.lcd"}));
    CHECK(a["config_hash"].get<std::string>().size() == 16);
    CHECK(a["config_hash"] == b["config_hash"]);
    CHECK(a["config_hash"] != c["config_hash"]);
}

TEST_CASE("sweep trains, profiles and tabulates every budget and seed") {
    Scratch s;
    REQUIRE(run({"synth-data", "--n", "24", "--seed", "4", "--out", s / "d.lcd"}).code == 0);
    const Run r = run({"sweep", "--data", s / "d.lcd", "--eps-list", "0,4/255", "--seeds", "2", "--epochs", "1",
                       "--batch-size", "12", "--profile-after", "--samples", "16", "--trials", "2", "--out-dir",
                       s / "sw"});
    REQUIRE(r.code == 0);
    const std::string table = slurp(s / "sw/sweep.csv");
    CHECK(table.rfind("eps,seed,model_id,train_accuracy,clean_accuracy,mean_criticality\n", 0) == 0);
    CHECK(count(table, "\n") == 5);
    CHECK(count(slurp(s / "sw/sweep_summary.csv"), "\n") == 3);
    CHECK(fs::exists(s / "sw/eps0.015686_seed1.lcm"));
    CHECK(fs::exists(s / "sw/eps0.015686_seed1.profile.json"));
    const json m = json::parse(slurp(s / "sw/manifest.json"));
    CHECK(m["result"].size() == 4);
    CHECK(m["outputs"].size() == 4 * 3 + 2);
}

}  // TEST_SUITE

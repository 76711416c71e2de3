#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <json.hpp>

#include "critmap/model_io.hpp"
#include "critmap/trainer.hpp"
#include "fixtures.hpp"

using namespace critmap;
using nlohmann::json;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::io;
}

bool same_model(const ModelGraph& a, const ModelGraph& b) {
    if (a.layers().size() != b.layers().size() || a.dtype() != b.dtype()) return false;
    for (std::size_t i = 0; i < a.layers().size(); ++i) {
        const auto& la = a.layers()[i];
        const auto& lb = b.layers()[i];
        if (la.id != lb.id || la.kind != lb.kind || !(la.hyper == lb.hyper) || !(la.weight_init == lb.weight_init) ||
            !(la.bias_init == lb.bias_init) || la.inputs != lb.inputs)
            return false;
        if (!la.parameterized()) continue;
        for (const auto& [name, t] : a.params(la.id))
            if (!t.bit_equal(b.params(lb.id).at(name))) return false;
    }
    return true;
}

/// Rewrites the JSON metadata of a model bundle in place, padding with spaces
/// so that the blob offsets stay valid.
std::vector<std::byte> edit_metadata(std::vector<std::byte> bytes, const std::function<void(json&)>& edit) {
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 8);
    std::string text(reinterpret_cast<const char*>(bytes.data() + 16), len);
    json meta = json::parse(text);
    edit(meta);
    std::string out = meta.dump();
    REQUIRE(out.size() <= len);
    out.resize(len, ' ');
    std::memcpy(bytes.data() + 16, out.data(), len);
    return bytes;
}

CriticalityProfile sample_profile() {
    CriticalityProfile p;
    p.model_id = "resnet \"mini\"";
    p.config.base_seed = 0xFFFFFFFFFFFFFFFFULL;
    p.config.n_samples = 1000;
    p.config.metric = Metric::accuracy_delta;
    p.clean_accuracy = 0.1 + 0.2;
    p.entries = {summarize("stem.conv", {1.0 / 3.0, 0.1, 5e-324}), summarize("head.fc", {0.9999999999999999, 0.5, 0.25})};
    return p;
}

}  // namespace

TEST_SUITE("model_io") {

TEST_CASE("model bundle round trip is bit exact") {
    for (DType dtype : {DType::f32, DType::f64}) {
        ArchConfig cfg = mini_resnet_config();
        cfg.dtype = dtype;
        ModelGraph m = build_model(cfg, 8);
        fixtures::perturb_running_stats(m, 2);
        m.set_name("mini");
        const auto bytes = io::serialize_model(m);
        CHECK(std::memcmp(bytes.data(), "LCM1", 4) == 0);
        const ModelGraph back = io::deserialize_model(bytes);
        CHECK(same_model(m, back));
        CHECK(back.name() == "mini");
        CHECK(io::serialize_model(back) == bytes);
        const Tensor x = fixtures::random_batch(m, 3, 1);
        CHECK(forward(m, x).bit_equal(forward(back, x)));
    }
}

TEST_CASE("model bundle files on disk") {
    const auto dir = std::filesystem::temp_directory_path() / "critmap_io_test";
    std::filesystem::create_directories(dir);
    const ModelGraph m = fixtures::per_kind_models(4)[6].model;
    io::save_model(m, dir / "m.lcm");
    CHECK(same_model(m, io::load_model(dir / "m.lcm")));
    CHECK(kind_of([&] { io::load_model(dir / "absent.lcm"); }) == ErrorKind::io);
    std::filesystem::remove_all(dir);
}

TEST_CASE("malformed model bundles") {
    const ModelGraph m = build_model(mini_resnet_config(), 1);
    const auto good = io::serialize_model(m);

    auto bad_magic = good;
    bad_magic[0] = std::byte{'X'};
    CHECK(kind_of([&] { io::deserialize_model(bad_magic); }) == ErrorKind::bad_magic);

    auto version = good;
    version[4] = std::byte{2};
    CHECK(kind_of([&] { io::deserialize_model(version); }) == ErrorKind::version_mismatch);

    for (std::size_t cut : {std::size_t{2}, std::size_t{10}, std::size_t{40}, good.size() - 1}) {
        const std::vector<std::byte> t(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
        CHECK(kind_of([&] { io::deserialize_model(t); }) == ErrorKind::truncated);
    }

    const auto shape = edit_metadata(good, [](json& j) {
        for (auto& t : j["tensors"])
            if (t["name"] == "stem.conv/weight") t["shape"][3] = 4;
    });
    CHECK(kind_of([&] { io::deserialize_model(shape); }) == ErrorKind::shape_mismatch);

    const auto misaligned = edit_metadata(good, [](json& j) {
        auto& t = j["tensors"][1];
        t["offset"] = t["offset"].get<std::uint64_t>() + 4;
    });
    CHECK(kind_of([&] { io::deserialize_model(misaligned); }) == ErrorKind::misaligned);

    auto garbage = good;
    garbage[16] = std::byte{'#'};
    CHECK(kind_of([&] { io::deserialize_model(garbage); }) == ErrorKind::validation);
}

TEST_CASE("dataset round trip and validation") {
    const Dataset d = synthetic_dataset(SynthConfig{3, 10, 2, 5, 5, 1.0, 0.2, 3});
    const auto bytes = io::serialize_dataset(d);
    CHECK(bytes.size() == 24 + 4 * 10 * 2 * 5 * 5 + 2 * 10);
    const Dataset back = io::deserialize_dataset(bytes);
    CHECK(back.images.bit_equal(d.images));
    CHECK(back.labels == d.labels);
    CHECK(back.num_classes == 3);

    auto label = bytes;
    label[bytes.size() - 2] = std::byte{3};  // last label = num_classes
    CHECK(kind_of([&] { io::deserialize_dataset(label); }) == ErrorKind::validation);

    auto trailing = bytes;
    trailing.push_back(std::byte{0});
    CHECK(kind_of([&] { io::deserialize_dataset(trailing); }) == ErrorKind::validation);
    const std::vector<std::byte> shorter(bytes.begin(), bytes.end() - 1);
    CHECK(kind_of([&] { io::deserialize_dataset(shorter); }) == ErrorKind::truncated);
    auto magic = bytes;
    magic[3] = std::byte{'2'};
    CHECK(kind_of([&] { io::deserialize_dataset(magic); }) == ErrorKind::bad_magic);
    auto pixel = bytes;
    const float big = 1.5f;
    std::memcpy(pixel.data() + 24, &big, 4);
    CHECK(kind_of([&] { io::deserialize_dataset(pixel); }) == ErrorKind::validation);
}

TEST_CASE("profile round trip keeps every float") {
    const auto p = sample_profile();
    const std::string text = io::profile_to_json(p);
    const auto back = io::profile_from_json(text);
    CHECK(back == p);
    CHECK(io::profile_to_json(back) == text);
    CHECK(kind_of([] { io::profile_from_json("{\"format\":\"other\",\"version\":1}"); }) == ErrorKind::bad_magic);
    CHECK(kind_of([] { io::profile_from_json("not json"); }) == ErrorKind::validation);
}

TEST_CASE("profile csv export") {
    const std::string csv = io::profile_to_csv(sample_profile());
    CHECK(csv.rfind("layer_id,mean,std,stderr,trial_0,trial_1,trial_2\n", 0) == 0);
    CHECK(csv.find("\nhead.fc,") != std::string::npos);
}

TEST_CASE("shortest round-trip formatting") {
    for (double v : {0.1, 1.0 / 3.0, 5e-324, 1e300, -0.0, 123456789.125}) {
        const std::string s = io::format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
    CHECK(io::format_double(0.1) == "0.1");
}

TEST_CASE("architecture json") {
    ArchConfig cfg = mini_resnet_config();
    cfg.stages = {{1, 2, 1}};
    cfg.num_classes = 3;
    const ArchConfig back = io::arch_from_json(io::arch_to_json(cfg));
    CHECK(back.stages.size() == 1);
    CHECK(back.stages[0].width == 2);
    CHECK(back.num_classes == 3);
    const ArchConfig partial = io::arch_from_json("{\"num_classes\": 7}");
    CHECK(partial.num_classes == 7);
    CHECK(partial.stages.size() == 2);
    CHECK(kind_of([] { io::arch_from_json("{\"block\": \"dense\"}"); }) == ErrorKind::config);
}

TEST_CASE("subsample") {
    const auto perm = subsample(10, 10, 3);
    std::vector<std::int64_t> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 10; ++i) CHECK(sorted[i] == i);
    CHECK(subsample(50, 7, 1) == subsample(50, 7, 1));
    CHECK(kind_of([] { subsample(5, 6, 0); }) == ErrorKind::parameter);
    std::vector<int> hits(10, 0);
    for (std::uint64_t s = 0; s < 10000; ++s) ++hits[static_cast<std::size_t>(subsample(10, 1, s)[0])];
    for (int h : hits) CHECK(std::abs(h - 1000) <= 100);
}

}  // TEST_SUITE

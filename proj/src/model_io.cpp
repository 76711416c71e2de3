#include "critmap/model_io.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace critmap::io {

using nlohmann::json;

namespace {

constexpr char kModelMagic[4] = {'L', 'C', 'M', '1'};
constexpr char kDatasetMagic[4] = {'L', 'C', 'D', '1'};
constexpr std::size_t kDatasetHeader = 24;

template <typename T>
void put(std::vector<std::byte>& out, T value) {
    const auto* p = reinterpret_cast<const std::byte*>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::byte> bytes, std::size_t offset) {
    T value;
    std::memcpy(&value, bytes.data() + offset, sizeof(T));
    return value;
}

std::size_t align_up(std::size_t n, std::size_t a) { return (n + a - 1) / a * a; }

json init_to_json(const InitSpec& s) {
    return {{"family", to_string(s.family)}, {"fan_mode", to_string(s.fan_mode)}, {"gain", s.gain}, {"p0", s.p0},
            {"p1", s.p1}};
}

InitSpec init_from_json(const json& j) {
    InitSpec s;
    s.family = init_family_from_string(j.at("family").get<std::string>());
    s.fan_mode = fan_mode_from_string(j.value("fan_mode", std::string("fan_in")));
    s.gain = j.value("gain", 1.0);
    s.p0 = j.value("p0", 0.0);
    s.p1 = j.value("p1", 1.0);
    return s;
}

json hyper_to_json(const LayerHyper& h) {
    return {{"in_channels", h.in_channels}, {"out_channels", h.out_channels}, {"kernel", h.kernel},
            {"stride", h.stride},           {"padding", h.padding},           {"in_features", h.in_features},
            {"out_features", h.out_features}, {"bias", h.bias},               {"eps", h.eps},
            {"momentum", h.momentum}};
}

LayerHyper hyper_from_json(const json& j) {
    LayerHyper h;
    h.in_channels = j.at("in_channels").get<std::int64_t>();
    h.out_channels = j.at("out_channels").get<std::int64_t>();
    h.kernel = j.at("kernel").get<int>();
    h.stride = j.at("stride").get<int>();
    h.padding = j.at("padding").get<int>();
    h.in_features = j.at("in_features").get<std::int64_t>();
    h.out_features = j.at("out_features").get<std::int64_t>();
    h.bias = j.at("bias").get<bool>();
    h.eps = j.at("eps").get<double>();
    h.momentum = j.at("momentum").get<double>();
    return h;
}

// Runs fn, converting JSON access failures into validation errors.
template <typename Fn>
auto guarded(const char* what, Fn&& fn) {
    try {
        return fn();
    } catch (const json::exception& e) {
        fail(ErrorKind::validation, std::string(what) + ": " + e.what());
    }
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot open '" + path.string() + "'");
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::byte> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    require(in.good() || size == 0, ErrorKind::io, "failed reading '" + path.string() + "'");
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::io, "failed writing '" + path.string() + "'");
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    write_file(path, std::as_bytes(std::span(text.data(), text.size())));
}

// --- model ------------------------------------------------------------------

std::vector<std::byte> serialize_model(const ModelGraph& model) {
    model.validate();
    json meta;
    meta["model_id"] = model.name();
    meta["dtype"] = to_string(model.dtype());
    meta["num_classes"] = model.num_classes();
    meta["input_shape"] = model.input_shape();
    meta["layers"] = json::array();
    for (const auto& l : model.layers())
        meta["layers"].push_back({{"id", l.id},
                                  {"kind", to_string(l.kind)},
                                  {"inputs", l.inputs},
                                  {"hyper", hyper_to_json(l.hyper)},
                                  {"weight_init", init_to_json(l.weight_init)},
                                  {"bias_init", init_to_json(l.bias_init)}});

    // Blob offsets depend on the metadata length, which depends on the offsets'
    // decimal width; iterate until the layout is stable.
    struct Entry {
        std::string name;
        const Tensor* tensor;
    };
    std::vector<Entry> entries;
    for (const auto& l : model.layers())
        if (l.parameterized())
            for (const auto& [name, t] : model.params(l.id)) entries.push_back({l.id + "/" + name, &t});

    std::string text;
    std::size_t blob_start = 0;
    for (int pass = 0; pass < 8; ++pass) {
        json table = json::array();
        std::size_t offset = blob_start;
        for (const auto& e : entries) {
            offset = align_up(offset, kBlobAlignment);
            const auto nbytes = e.tensor->bytes().size();
            table.push_back({{"name", e.name}, {"offset", offset}, {"nbytes", nbytes}, {"shape", e.tensor->shape()}});
            offset += nbytes;
        }
        meta["tensors"] = table;
        text = meta.dump();
        const std::size_t start = align_up(16 + text.size(), kBlobAlignment);
        if (start == blob_start) break;
        blob_start = start;
    }

    std::vector<std::byte> out;
    out.reserve(blob_start);
    for (char c : kModelMagic) out.push_back(static_cast<std::byte>(c));
    put<std::uint32_t>(out, kModelFormatVersion);
    put<std::uint64_t>(out, text.size());
    for (char c : text) out.push_back(static_cast<std::byte>(c));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        out.resize(meta["tensors"][i]["offset"].get<std::size_t>(), std::byte{0});
        const auto b = entries[i].tensor->bytes();
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

ModelGraph deserialize_model(std::span<const std::byte> bytes) {
    require(bytes.size() >= 4, ErrorKind::truncated, "model file shorter than its magic");
    require(std::memcmp(bytes.data(), kModelMagic, 4) == 0, ErrorKind::bad_magic, "not a model bundle (magic)");
    require(bytes.size() >= 16, ErrorKind::truncated, "model header truncated");
    const auto version = get<std::uint32_t>(bytes, 4);
    require(version == kModelFormatVersion, ErrorKind::version_mismatch,
            "model format version " + std::to_string(version) + " unsupported (expected " +
                std::to_string(kModelFormatVersion) + ")");
    const auto meta_len = get<std::uint64_t>(bytes, 8);
    require(meta_len <= bytes.size() - 16, ErrorKind::truncated, "metadata extends past end of file");

    const std::string_view text(reinterpret_cast<const char*>(bytes.data() + 16), static_cast<std::size_t>(meta_len));
    const json meta = guarded("model metadata", [&] { return json::parse(text); });

    return guarded("model metadata", [&] {
        const DType dtype = dtype_from_string(meta.at("dtype").get<std::string>());
        ModelGraph model(meta.at("input_shape").get<Shape>(), meta.at("num_classes").get<int>(), dtype);
        model.set_name(meta.at("model_id").get<std::string>());
        for (const auto& l : meta.at("layers")) {
            LayerSpec spec;
            spec.id = l.at("id").get<std::string>();
            spec.kind = layer_kind_from_string(l.at("kind").get<std::string>());
            spec.inputs = l.at("inputs").get<std::vector<std::string>>();
            spec.hyper = hyper_from_json(l.at("hyper"));
            spec.weight_init = init_from_json(l.at("weight_init"));
            spec.bias_init = init_from_json(l.at("bias_init"));
            try {
                model.add_layer(std::move(spec));
            } catch (const Error& e) {
                fail(ErrorKind::validation, e.what());
            }
        }
        try {
            model.validate();
        } catch (const Error& e) {
            fail(ErrorKind::validation, e.what());
        }

        std::map<std::string, const json*> table;
        for (const auto& t : meta.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            require(table.emplace(name, &t).second, ErrorKind::validation, "duplicate tensor '" + name + "'");
        }
        std::size_t used = 0;
        for (const auto& l : model.layers()) {
            if (!l.parameterized()) continue;
            for (auto& [pname, tensor] : model.mutable_params(l.id)) {
                const std::string name = l.id + "/" + pname;
                auto it = table.find(name);
                require(it != table.end(), ErrorKind::validation, "tensor '" + name + "' missing from table");
                ++used;
                const json& t = *it->second;
                const auto shape = t.at("shape").get<Shape>();
                const auto offset = t.at("offset").get<std::uint64_t>();
                const auto nbytes = t.at("nbytes").get<std::uint64_t>();
                require(shape == tensor.shape(), ErrorKind::shape_mismatch,
                        name + ": stored shape " + shape_string(shape) + " but layer expects " +
                            shape_string(tensor.shape()));
                require(nbytes == tensor.bytes().size(), ErrorKind::shape_mismatch,
                        name + ": byte length " + std::to_string(nbytes) + " inconsistent with shape and dtype");
                require(offset % kBlobAlignment == 0, ErrorKind::misaligned,
                        name + ": blob offset " + std::to_string(offset) + " is not 64-byte aligned");
                require(offset >= 16 + meta_len, ErrorKind::validation, name + ": blob overlaps the header");
                require(offset <= bytes.size() && nbytes <= bytes.size() - offset, ErrorKind::truncated,
                        name + ": blob extends past end of file");
                auto dst = tensor.mutable_bytes();
                std::memcpy(dst.data(), bytes.data() + offset, static_cast<std::size_t>(nbytes));
            }
        }
        require(used == table.size(), ErrorKind::validation, "tensor table lists tensors the graph does not have");
        return model;
    });
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) { write_file(path, serialize_model(model)); }
ModelGraph load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

// --- dataset ----------------------------------------------------------------

std::vector<std::byte> serialize_dataset(const Dataset& data) {
    data.validate();
    require(data.num_classes <= 65536, ErrorKind::validation, "labels must fit in u16");
    std::vector<std::byte> out;
    for (char c : kDatasetMagic) out.push_back(static_cast<std::byte>(c));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(data.size()));
    for (std::size_t axis = 1; axis < 4; ++axis) put<std::uint32_t>(out, static_cast<std::uint32_t>(data.images.dim(axis)));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(data.num_classes));
    const auto px = data.images.bytes();
    out.insert(out.end(), px.begin(), px.end());
    for (int y : data.labels) put<std::uint16_t>(out, static_cast<std::uint16_t>(y));
    return out;
}

Dataset deserialize_dataset(std::span<const std::byte> bytes) {
    require(bytes.size() >= 4, ErrorKind::truncated, "dataset file shorter than its magic");
    require(std::memcmp(bytes.data(), kDatasetMagic, 4) == 0, ErrorKind::bad_magic, "not a dataset file (magic)");
    require(bytes.size() >= kDatasetHeader, ErrorKind::truncated, "dataset header truncated");
    const std::uint64_t n = get<std::uint32_t>(bytes, 4);
    const std::uint64_t c = get<std::uint32_t>(bytes, 8);
    const std::uint64_t h = get<std::uint32_t>(bytes, 12);
    const std::uint64_t w = get<std::uint32_t>(bytes, 16);
    const std::uint32_t classes = get<std::uint32_t>(bytes, 20);
    require(n >= 1 && c >= 1 && h >= 1 && w >= 1 && classes >= 1, ErrorKind::validation,
            "dataset header has a zero count");
    const std::uint64_t pixels = n * c * h * w;
    const std::uint64_t expected = kDatasetHeader + pixels * 4 + n * 2;
    require(bytes.size() >= expected, ErrorKind::truncated,
            "dataset has " + std::to_string(bytes.size()) + " bytes, header implies " + std::to_string(expected));
    require(bytes.size() == expected, ErrorKind::validation, "dataset has trailing bytes");

    std::vector<float> px(static_cast<std::size_t>(pixels));
    std::memcpy(px.data(), bytes.data() + kDatasetHeader, static_cast<std::size_t>(pixels) * 4);
    for (float v : px)
        require(v >= 0.0f && v <= 1.0f, ErrorKind::validation, "pixel value outside [0,1]");
    Dataset d;
    d.num_classes = static_cast<int>(classes);
    d.labels.resize(static_cast<std::size_t>(n));
    const std::size_t label_off = kDatasetHeader + static_cast<std::size_t>(pixels) * 4;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = get<std::uint16_t>(bytes, label_off + 2 * i);
        require(y < classes, ErrorKind::validation,
                "label " + std::to_string(y) + " >= num_classes " + std::to_string(classes));
        d.labels[i] = y;
    }
    d.images = Tensor({static_cast<std::int64_t>(n), static_cast<std::int64_t>(c), static_cast<std::int64_t>(h),
                       static_cast<std::int64_t>(w)},
                      std::move(px));
    return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) { write_file(path, serialize_dataset(data)); }
Dataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(read_file(path)); }

// --- profile ----------------------------------------------------------------

std::string profile_to_json(const CriticalityProfile& p) {
    json j;
    j["format"] = "critmap-profile";
    j["version"] = 1;
    j["model_id"] = p.model_id;
    j["config"] = {{"base_seed", p.config.base_seed},
                   {"n_trials", p.config.n_trials},
                   {"n_samples", p.config.n_samples},
                   {"batch_size", p.config.batch_size},
                   {"metric", to_string(p.config.metric)},
                   {"clamp_accuracy_delta", p.config.clamp_accuracy_delta}};
    j["clean_accuracy"] = p.clean_accuracy;
    j["entries"] = json::array();
    for (const auto& e : p.entries)
        j["entries"].push_back({{"layer_id", e.layer_id},
                                {"per_trial", e.per_trial},
                                {"mean", e.mean},
                                {"std", e.stddev},
                                {"stderr", e.std_error}});
    return j.dump(2) + "\n";
}

CriticalityProfile profile_from_json(std::string_view text) {
    return guarded("profile", [&] {
        const json j = json::parse(text);
        require(j.at("format").get<std::string>() == "critmap-profile", ErrorKind::bad_magic, "not a profile document");
        require(j.at("version").get<int>() == 1, ErrorKind::version_mismatch, "unsupported profile version");
        CriticalityProfile p;
        p.model_id = j.at("model_id").get<std::string>();
        const auto& c = j.at("config");
        p.config.base_seed = c.at("base_seed").get<std::uint64_t>();
        p.config.n_trials = c.at("n_trials").get<int>();
        p.config.n_samples = c.at("n_samples").get<std::int64_t>();
        p.config.batch_size = c.at("batch_size").get<int>();
        p.config.metric = metric_from_string(c.at("metric").get<std::string>());
        p.config.clamp_accuracy_delta = c.value("clamp_accuracy_delta", true);
        p.clean_accuracy = j.at("clean_accuracy").get<double>();
        for (const auto& e : j.at("entries")) {
            CriticalityStats s;
            s.layer_id = e.at("layer_id").get<std::string>();
            s.per_trial = e.at("per_trial").get<std::vector<double>>();
            s.mean = e.at("mean").get<double>();
            s.stddev = e.at("std").get<double>();
            s.std_error = e.at("stderr").get<double>();
            require(static_cast<int>(s.per_trial.size()) == p.config.n_trials, ErrorKind::validation,
                    s.layer_id + ": per_trial length differs from n_trials");
            p.entries.push_back(std::move(s));
        }
        return p;
    });
}

void save_profile(const CriticalityProfile& profile, const std::filesystem::path& path) {
    write_text(path, profile_to_json(profile));
}

CriticalityProfile load_profile(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return profile_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string profile_to_csv(const CriticalityProfile& profile) {
    std::string out = "layer_id,mean,std,stderr";
    const std::size_t trials = profile.entries.empty() ? 0 : profile.entries.front().per_trial.size();
    for (std::size_t t = 0; t < trials; ++t) out += ",trial_" + std::to_string(t);
    out += '\n';
    for (const auto& e : profile.entries) {
        out += e.layer_id + ',' + format_double(e.mean) + ',' + format_double(e.stddev) + ',' + format_double(e.std_error);
        for (double v : e.per_trial) out += ',' + format_double(v);
        out += '\n';
    }
    return out;
}

// --- architecture -------------------------------------------------------------

ArchConfig arch_from_json(std::string_view text) {
    return guarded("architecture", [&] {
        const json j = json::parse(text);
        ArchConfig a = mini_resnet_config();
        a.input_shape = j.value("input_shape", a.input_shape);
        a.num_classes = j.value("num_classes", a.num_classes);
        a.stem_channels = j.value("stem_channels", a.stem_channels);
        a.stem_kernel = j.value("stem_kernel", a.stem_kernel);
        a.stem_stride = j.value("stem_stride", a.stem_stride);
        a.stem_pool = j.value("stem_pool", a.stem_pool);
        if (j.contains("block")) {
            const auto b = j.at("block").get<std::string>();
            require(b == "bottleneck" || b == "basic", ErrorKind::config, "block must be bottleneck or basic");
            a.block = b == "basic" ? BlockKind::basic : BlockKind::bottleneck;
        }
        a.expansion = j.value("expansion", a.expansion);
        if (j.contains("stages")) {
            a.stages.clear();
            for (const auto& s : j.at("stages"))
                a.stages.push_back({s.at("blocks").get<int>(), s.at("width").get<int>(), s.value("stride", 1)});
        }
        a.conv_bias = j.value("conv_bias", a.conv_bias);
        a.head_bias = j.value("head_bias", a.head_bias);
        if (j.contains("conv_init")) a.conv_init = init_from_json(j.at("conv_init"));
        if (j.contains("linear_init")) a.linear_init = init_from_json(j.at("linear_init"));
        if (j.contains("bias_init")) a.bias_init = init_from_json(j.at("bias_init"));
        a.bn_eps = j.value("bn_eps", a.bn_eps);
        a.bn_momentum = j.value("bn_momentum", a.bn_momentum);
        if (j.contains("dtype")) a.dtype = dtype_from_string(j.at("dtype").get<std::string>());
        return a;
    });
}

std::string arch_to_json(const ArchConfig& a) {
    json stages = json::array();
    for (const auto& s : a.stages) stages.push_back({{"blocks", s.blocks}, {"width", s.width}, {"stride", s.stride}});
    json j{{"input_shape", a.input_shape},
           {"num_classes", a.num_classes},
           {"stem_channels", a.stem_channels},
           {"stem_kernel", a.stem_kernel},
           {"stem_stride", a.stem_stride},
           {"stem_pool", a.stem_pool},
           {"block", a.block == BlockKind::basic ? "basic" : "bottleneck"},
           {"expansion", a.expansion},
           {"stages", stages},
           {"conv_bias", a.conv_bias},
           {"head_bias", a.head_bias},
           {"conv_init", init_to_json(a.conv_init)},
           {"linear_init", init_to_json(a.linear_init)},
           {"bias_init", init_to_json(a.bias_init)},
           {"bn_eps", a.bn_eps},
           {"bn_momentum", a.bn_momentum},
           {"dtype", to_string(a.dtype)}};
    return j.dump(2) + "\n";
}

}  // namespace critmap::io

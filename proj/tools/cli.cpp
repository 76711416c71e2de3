#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <ostream>

#include "critmap/criticality.hpp"
#include "critmap/model_io.hpp"
#include "critmap/report.hpp"
#include "critmap/trainer.hpp"
#include "critmap/version.hpp"

namespace critmap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Bad flag values detected after parsing; reported like parse errors (exit 2).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void usage_check(bool cond, const std::string& message) {
    if (!cond) throw UsageError(message);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Collects the outputs of one command and writes its manifest last.
class Manifest {
public:
    Manifest(std::string command, const std::vector<std::string>& args)
        : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
        for (const auto& a : args) line_ += (line_.empty() ? "" : " ") + a;
    }

    void output(const fs::path& p) { outputs_.push_back(p.string()); }
    json& config() { return config_; }
    json& result() { return result_; }

    void write(const fs::path& path) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        json j{{"command", command_},
               {"command_line", line_},
               {"config", config_},
               {"config_hash", hex64(hash64(config_.dump()))},
               {"tool_version", std::string(kVersion)},
               {"wall_time_seconds", wall},
               {"outputs", outputs_}};
        if (!result_.is_null()) j["result"] = result_;
        io::write_text(path, j.dump(2) + "\n");
    }

private:
    std::string command_;
    std::string line_;
    std::chrono::steady_clock::time_point start_;
    json config_ = json::object();
    json result_;
    std::vector<std::string> outputs_;
};

fs::path manifest_path(const fs::path& primary) { return fs::path(primary.string() + ".manifest.json"); }

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int default_jobs() {
    const char* env = std::getenv("CRITMAP_JOBS");
    if (env == nullptr || *env == '\0') return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    usage_check(end != nullptr && *end == '\0' && v >= 1 && v <= 1024, "CRITMAP_JOBS must be an integer in [1, 1024]");
    return static_cast<int>(v);
}

std::vector<double> parse_eps_list(const std::string& text, const std::string& unit) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        out.push_back(parse_eps(item, unit));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

// --- shared option groups ----------------------------------------------------

struct TrainFlags {
    std::string arch = "mini";
    std::string mode = "standard";
    std::string eps = "0";
    std::string eps_unit = "pixel";
    std::string alpha;
    std::string norm = "linf";
    int steps = 3;
    bool no_random_start = false;
    int epochs = 10;
    int batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> init_seed;
    int lr_step = 0;
    double lr_gamma = 0.1;
    double noise_sigma = 0.0;
    double flip_prob = 0.5;
    int crop_pad = 0;

    void add(CLI::App* app, bool with_eps) {
        app->add_option("--arch", arch, "'mini' or a JSON architecture file");
        if (with_eps) {
            app->add_option("--mode", mode, "standard | adv | aug")
                ->check(CLI::IsMember({"standard", "adv", "adversarial", "aug", "augmented"}));
            app->add_option("--eps", eps, "attack budget, e.g. 0.03 or 8/255");
        }
        app->add_option("--eps-unit", eps_unit, "pixel (as given) or 255 (plain numbers are divided by 255)")
            ->check(CLI::IsMember({"pixel", "255"}));
        app->add_option("--alpha", alpha, "PGD step size (default 2.5 * eps / steps)");
        app->add_option("--norm", norm, "linf | l2")->check(CLI::IsMember({"linf", "l2"}));
        app->add_option("--steps", steps, "PGD iterations")->check(CLI::PositiveNumber);
        app->add_flag("--no-random-start", no_random_start, "start PGD at the clean input");
        app->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
        app->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
        app->add_option("--lr", lr)->check(CLI::NonNegativeNumber);
        app->add_option("--momentum", momentum)->check(CLI::NonNegativeNumber);
        app->add_option("--weight-decay", weight_decay)->check(CLI::NonNegativeNumber);
        app->add_option("--seed", seed, "shuffle/attack seed");
        app->add_option("--init-seed", init_seed, "parameter initialization seed (default: --seed)");
        app->add_option("--lr-step", lr_step, "decay the learning rate every N epochs")->check(CLI::NonNegativeNumber);
        app->add_option("--lr-gamma", lr_gamma)->check(CLI::PositiveNumber);
        app->add_option("--noise-sigma", noise_sigma, "augmented mode: gaussian pixel noise")
            ->check(CLI::NonNegativeNumber);
        app->add_option("--flip-prob", flip_prob, "augmented mode: horizontal flip probability")
            ->check(CLI::Range(0.0, 1.0));
        app->add_option("--crop-pad", crop_pad, "augmented mode: random crop padding")->check(CLI::NonNegativeNumber);
    }

    TrainConfig config(double eps_value) const {
        TrainConfig c;
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.lr = lr;
        c.momentum = momentum;
        c.weight_decay = weight_decay;
        c.seed = seed;
        c.mode = train_mode_from_string(mode);
        c.lr_step = lr_step;
        c.lr_gamma = lr_gamma;
        c.pgd.eps = eps_value;
        c.pgd.steps = steps;
        c.pgd.norm = norm_from_string(norm);
        c.pgd.random_start = !no_random_start;
        if (!alpha.empty()) c.pgd.alpha = parse_eps(alpha, eps_unit);
        if (c.mode == TrainMode::augmented) {
            c.augment.noise_sigma = noise_sigma;
            c.augment.flip_prob = flip_prob;
            c.augment.crop_pad = crop_pad;
        }
        try {
            c.validate();
            c.pgd.validate();
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        return c;
    }

    ArchConfig architecture(const Dataset& data) const {
        ArchConfig a = mini_resnet_config();
        if (arch != "mini") {
            const auto bytes = io::read_file(arch);
            a = io::arch_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        }
        a.input_shape = data.sample_shape();
        a.num_classes = data.num_classes;
        return a;
    }

    json to_json() const {
        return {{"arch", arch},
                {"mode", mode},
                {"eps", eps},
                {"eps_unit", eps_unit},
                {"alpha", alpha},
                {"norm", norm},
                {"steps", steps},
                {"random_start", !no_random_start},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"lr", lr},
                {"momentum", momentum},
                {"weight_decay", weight_decay},
                {"seed", seed},
                {"init_seed", init_seed.value_or(seed)},
                {"lr_step", lr_step},
                {"lr_gamma", lr_gamma},
                {"noise_sigma", noise_sigma},
                {"flip_prob", flip_prob},
                {"crop_pad", crop_pad}};
    }
};

struct ProfileFlags {
    std::optional<std::int64_t> samples;
    int trials = 3;
    std::uint64_t seed = 0;
    std::string metric = "cosine";
    int batch_size = 64;
    std::optional<int> jobs;
    bool signed_delta = false;

    void add(CLI::App* app, const std::string& seed_flag) {
        app->add_option(seed_flag, seed, "base seed of subset and randomization draws");
        app->add_option("--samples", samples, "evaluation subset size (default min(10000, N))")
            ->check(CLI::PositiveNumber);
        app->add_option("--trials", trials)->check(CLI::PositiveNumber);
        app->add_option("--metric", metric)->check(CLI::IsMember({"cosine", "accuracy_delta"}));
        app->add_option("--eval-batch-size", batch_size)->check(CLI::PositiveNumber);
        app->add_option("--jobs", jobs, "worker threads (default $CRITMAP_JOBS or 1)")->check(CLI::Range(1, 1024));
        app->add_flag("--signed-accuracy-delta", signed_delta, "keep negative accuracy changes");
    }

    RunConfig config(std::int64_t dataset_size) const {
        RunConfig c;
        c.base_seed = seed;
        c.n_trials = trials;
        c.n_samples = samples.value_or(std::min<std::int64_t>(10000, dataset_size));
        c.batch_size = batch_size;
        c.metric = metric_from_string(metric);
        c.clamp_accuracy_delta = !signed_delta;
        try {
            c.validate(dataset_size);
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        return c;
    }

    int worker_count() const { return jobs.value_or(default_jobs()); }

    json to_json(std::int64_t dataset_size) const {
        const RunConfig c = config(dataset_size);
        return {{"samples", c.n_samples},         {"trials", c.n_trials},
                {"seed", c.base_seed},            {"metric", metric},
                {"batch_size", c.batch_size},     {"clamp_accuracy_delta", c.clamp_accuracy_delta}};
    }
};

std::string model_id_from(const std::string& explicit_id, const fs::path& path) {
    return explicit_id.empty() ? path.stem().string() : explicit_id;
}

std::string log_csv(const std::vector<EpochRecord>& log) {
    std::string s = "epoch,split,loss,accuracy\n";
    for (const auto& r : log)
        s += std::to_string(r.epoch) + ',' + r.split + ',' + io::format_double(r.loss) + ',' +
             io::format_double(r.accuracy) + '\n';
    return s;
}

std::string eps_label(double eps) {
    // Stable file-name friendly label, e.g. 0.0627450980392157 -> "0.062745".
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", eps);
    return buf;
}

}  // namespace

double parse_eps(std::string_view text, std::string_view unit) {
    auto number = [&](std::string_view s) {
        const std::string str(s);
        char* end = nullptr;
        const double v = std::strtod(str.c_str(), &end);
        usage_check(!str.empty() && end == str.c_str() + str.size() && std::isfinite(v),
                    "cannot parse '" + std::string(text) + "' as a number");
        return v;
    };
    usage_check(unit == "pixel" || unit == "255", "eps unit must be 'pixel' or '255'");
    double v = 0.0;
    if (const auto slash = text.find('/'); slash != std::string_view::npos) {
        const double den = number(text.substr(slash + 1));
        usage_check(den > 0.0, "eps denominator must be positive");
        v = number(text.substr(0, slash)) / den;
    } else {
        v = number(text);
        if (unit == "255") v /= 255.0;
    }
    usage_check(v >= 0.0, "eps must be non-negative");
    return v;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"critmap: per-layer criticality profiling for small convolutional networks", "critmap"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    // synth-data
    SynthConfig synth;
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth-data", "write a synthetic class-conditional image dataset");
    synth_cmd->add_option("--classes", synth.classes)->check(CLI::Range(1, 65535));
    synth_cmd->add_option("--n", synth.n)->check(CLI::PositiveNumber);
    synth_cmd->add_option("--size", synth.size)->check(CLI::PositiveNumber);
    synth_cmd->add_option("--channels", synth.channels)->check(CLI::PositiveNumber);
    synth_cmd->add_option("--cells", synth.cells, "prototype resolution per side")->check(CLI::PositiveNumber);
    synth_cmd->add_option("--margin", synth.margin, "prototype contrast; larger is easier")->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--noise", synth.noise, "per-pixel gaussian noise")->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--texture", synth.texture, "amplitude of a per-class pixel sign pattern")
        ->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--seed", synth.seed);
    synth_cmd->add_option("--out", synth_out, "dataset file")->required();

    // train
    TrainFlags train_flags;
    std::string train_data, train_out, train_log, train_id;
    auto* train_cmd = app.add_subcommand("train", "train a model and write a model bundle");
    train_cmd->add_option("--data", train_data, "dataset file")->required();
    train_cmd->add_option("--out", train_out, "model bundle")->required();
    train_cmd->add_option("--log", train_log, "training log CSV (default <out>.log.csv)");
    train_cmd->add_option("--id", train_id, "model id stored in the bundle (default: file stem)");
    train_flags.add(train_cmd, true);

    // profile
    ProfileFlags profile_flags;
    std::string profile_model_path, profile_data, profile_out, profile_csv, profile_id;
    auto* profile_cmd = app.add_subcommand("profile", "measure per-layer criticality of a model");
    profile_cmd->add_option("--model", profile_model_path, "model bundle")->required();
    profile_cmd->add_option("--data", profile_data, "dataset file")->required();
    profile_cmd->add_option("--out", profile_out, "profile JSON")->required();
    profile_cmd->add_option("--csv", profile_csv, "also write the profile as CSV");
    profile_cmd->add_option("--id", profile_id, "model id in the profile (default: model file stem)");
    profile_flags.add(profile_cmd, "--seed");

    // report
    std::vector<std::string> report_profiles;
    std::string report_baseline, report_format = "svg", report_view = "mean", report_out;
    auto* report_cmd = app.add_subcommand("report", "render profiles as CSV, JSON or an SVG heatmap");
    report_cmd->add_option("--profiles", report_profiles, "profile JSON files")->required()->expected(1, -1);
    report_cmd->add_option("--baseline", report_baseline, "model id used for the delta view");
    report_cmd->add_option("--format", report_format)->check(CLI::IsMember({"csv", "json", "svg"}));
    report_cmd->add_option("--view", report_view)->check(CLI::IsMember({"mean", "delta", "stderr"}));
    report_cmd->add_option("--out", report_out)->required();

    // correlate
    std::vector<std::string> corr_profiles;
    std::string corr_out;
    auto* corr_cmd = app.add_subcommand("correlate", "Spearman R of mean criticality against clean accuracy");
    corr_cmd->add_option("--profiles", corr_profiles, "profile JSON files")->required()->expected(1, -1);
    corr_cmd->add_option("--out", corr_out, "scatter CSV")->required();

    // sweep
    TrainFlags sweep_flags;
    ProfileFlags sweep_profile;
    std::string sweep_data, sweep_eps = "0,4/255,16/255", sweep_dir;
    int sweep_seeds = 3;
    bool sweep_profile_after = false;
    auto* sweep_cmd = app.add_subcommand("sweep", "adversarial training over a list of attack budgets");
    sweep_cmd->add_option("--data", sweep_data, "dataset file")->required();
    sweep_cmd->add_option("--eps-list", sweep_eps, "comma separated budgets, e.g. 0,4/255,16/255");
    sweep_cmd->add_option("--seeds", sweep_seeds, "training seeds 0..N-1 per budget")->check(CLI::PositiveNumber);
    sweep_cmd->add_flag("--profile-after", sweep_profile_after, "profile every trained model");
    sweep_cmd->add_option("--out-dir", sweep_dir)->required();
    sweep_flags.add(sweep_cmd, false);
    sweep_profile.add(sweep_cmd, "--profile-seed");

    std::vector<std::string> argv_tail(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::vector<std::string> reversed(argv_tail.rbegin(), argv_tail.rend());

    try {
        app.parse(reversed);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (*synth_cmd) {
            Manifest manifest("synth-data", args);
            const Dataset data = synthetic_dataset(synth);
            ensure_parent(synth_out);
            io::save_dataset(data, synth_out);
            manifest.config() = {{"classes", synth.classes}, {"n", synth.n},         {"size", synth.size},
                                 {"channels", synth.channels}, {"cells", synth.cells}, {"margin", synth.margin},
                                 {"noise", synth.noise},       {"texture", synth.texture}, {"seed", synth.seed}};
            manifest.output(synth_out);
            manifest.write(manifest_path(synth_out));
            out << "wrote " << data.size() << " samples to " << synth_out << "\n";
        } else if (*train_cmd) {
            Manifest manifest("train", args);
            const double eps = parse_eps(train_flags.eps, train_flags.eps_unit);
            const TrainConfig cfg = train_flags.config(eps);
            const Dataset data = io::load_dataset(train_data);
            ModelGraph model = build_model(train_flags.architecture(data), train_flags.init_seed.value_or(train_flags.seed));
            model.set_name(model_id_from(train_id, train_out));
            const TrainResult r = train(std::move(model), data, cfg);
            const fs::path log_path = train_log.empty() ? fs::path(train_out + ".log.csv") : fs::path(train_log);
            ensure_parent(train_out);
            ensure_parent(log_path);
            io::save_model(r.model, train_out);
            io::write_text(log_path, log_csv(r.log));
            manifest.config() = train_flags.to_json();
            manifest.config()["data"] = train_data;
            manifest.config()["eps_value"] = eps;
            const double acc = evaluate_accuracy(r.model, data);
            manifest.result() = {{"train_accuracy", acc}};
            manifest.output(train_out);
            manifest.output(log_path);
            manifest.write(manifest_path(train_out));
            out << "trained " << r.model.name() << ": accuracy " << acc << "\n";
        } else if (*profile_cmd) {
            Manifest manifest("profile", args);
            const ModelGraph model = io::load_model(profile_model_path);
            const Dataset data = io::load_dataset(profile_data);
            const RunConfig cfg = profile_flags.config(data.size());
            const auto profile = profile_model(model, data, cfg, model_id_from(profile_id, profile_model_path),
                                               profile_flags.worker_count());
            ensure_parent(profile_out);
            io::save_profile(profile, profile_out);
            manifest.output(profile_out);
            if (!profile_csv.empty()) {
                ensure_parent(profile_csv);
                io::write_text(profile_csv, io::profile_to_csv(profile));
                manifest.output(profile_csv);
            }
            manifest.config() = profile_flags.to_json(data.size());
            manifest.config()["model"] = profile_model_path;
            manifest.config()["data"] = profile_data;
            manifest.result() = {{"mean_criticality", mean_model_criticality(profile)},
                                 {"clean_accuracy", profile.clean_accuracy}};
            manifest.write(manifest_path(profile_out));
            out << "profiled " << profile.entries.size() << " layers of " << profile.model_id
                << ": mean criticality " << mean_model_criticality(profile) << "\n";
        } else if (*report_cmd) {
            Manifest manifest("report", args);
            std::vector<CriticalityProfile> profiles;
            for (const auto& p : report_profiles) profiles.push_back(io::load_profile(p));
            const auto view = report_view_from_string(report_view);
            std::optional<std::string> baseline;
            if (!report_baseline.empty()) baseline = report_baseline;
            usage_check(view != ReportView::delta || baseline, "--view delta requires --baseline");
            const ReportMatrix m = build_report(profiles, view, baseline);
            std::string text;
            if (report_format == "csv")
                text = report_csv(profiles, m);
            else if (report_format == "json")
                text = report_json(m);
            else
                text = report_svg(m);
            ensure_parent(report_out);
            io::write_text(report_out, text);
            manifest.config() = {{"profiles", report_profiles},
                                 {"baseline", report_baseline},
                                 {"format", report_format},
                                 {"view", report_view}};
            manifest.output(report_out);
            manifest.write(manifest_path(report_out));
            out << "wrote " << report_format << " report (" << m.models.size() << " x " << m.layers.size() << ") to "
                << report_out << "\n";
        } else if (*corr_cmd) {
            Manifest manifest("correlate", args);
            std::vector<CriticalityProfile> profiles;
            for (const auto& p : corr_profiles) profiles.push_back(io::load_profile(p));
            const Correlation c = correlate(profiles);
            ensure_parent(corr_out);
            io::write_text(corr_out, correlation_csv(c));
            manifest.config() = {{"profiles", corr_profiles}};
            manifest.result() = {{"spearman_r", c.spearman_r ? json(*c.spearman_r) : json(nullptr)},
                                 {"n", c.models.size()}};
            if (!c.warning.empty()) {
                manifest.result()["warning"] = c.warning;
                err << "warning: " << c.warning << "\n";
            }
            manifest.output(corr_out);
            manifest.write(manifest_path(corr_out));
            out << "spearman_r=" << (c.spearman_r ? io::format_double(*c.spearman_r) : "null") << "\n";
        } else if (*sweep_cmd) {
            Manifest manifest("sweep", args);
            const auto eps_values = parse_eps_list(sweep_eps, sweep_flags.eps_unit);
            const Dataset data = io::load_dataset(sweep_data);
            sweep_flags.mode = "adv";
            const fs::path dir(sweep_dir);
            fs::create_directories(dir);
            const RunConfig rc = sweep_profile.config(data.size());

            std::string table = "eps,seed,model_id,train_accuracy,clean_accuracy,mean_criticality\n";
            std::string summary = "eps,seeds,mean_criticality,std_over_seeds\n";
            json results = json::array();
            for (double eps : eps_values) {
                std::vector<double> crit;
                for (int s = 0; s < sweep_seeds; ++s) {
                    TrainFlags f = sweep_flags;
                    f.seed = static_cast<std::uint64_t>(s);
                    f.init_seed.reset();
                    const TrainConfig cfg = f.config(eps);
                    const std::string id = "eps" + eps_label(eps) + "_seed" + std::to_string(s);
                    ModelGraph model = build_model(f.architecture(data), f.seed);
                    model.set_name(id);
                    const TrainResult r = train(std::move(model), data, cfg);
                    const fs::path model_path = dir / (id + ".lcm");
                    io::save_model(r.model, model_path);
                    io::write_text(dir / (id + ".log.csv"), log_csv(r.log));
                    manifest.output(model_path);
                    manifest.output(dir / (id + ".log.csv"));
                    const double train_acc = evaluate_accuracy(r.model, data);
                    json row{{"eps", eps}, {"seed", s}, {"model_id", id}, {"train_accuracy", train_acc}};
                    table += io::format_double(eps) + ',' + std::to_string(s) + ',' + id + ',' +
                             io::format_double(train_acc) + ',';
                    if (sweep_profile_after) {
                        const auto profile = profile_model(r.model, data, rc, id, sweep_profile.worker_count());
                        const fs::path ppath = dir / (id + ".profile.json");
                        io::save_profile(profile, ppath);
                        manifest.output(ppath);
                        const double mc = mean_model_criticality(profile);
                        crit.push_back(mc);
                        row["clean_accuracy"] = profile.clean_accuracy;
                        row["mean_criticality"] = mc;
                        table += io::format_double(profile.clean_accuracy) + ',' + io::format_double(mc) + '\n';
                    } else {
                        const double acc = evaluate_accuracy(r.model, data);
                        row["clean_accuracy"] = acc;
                        table += io::format_double(acc) + ",\n";
                    }
                    results.push_back(row);
                    out << "eps " << eps << " seed " << s << " done\n";
                }
                if (!crit.empty()) {
                    const auto ms = mean_std(crit);
                    summary += io::format_double(eps) + ',' + std::to_string(crit.size()) + ',' +
                               io::format_double(ms.mean) + ',' + io::format_double(ms.stddev) + '\n';
                    out << "eps " << eps << ": mean criticality " << ms.mean << " +- " << ms.stddev << "\n";
                }
            }
            io::write_text(dir / "sweep.csv", table);
            manifest.output(dir / "sweep.csv");
            if (sweep_profile_after) {
                io::write_text(dir / "sweep_summary.csv", summary);
                manifest.output(dir / "sweep_summary.csv");
            }
            manifest.config() = sweep_flags.to_json();
            manifest.config()["eps_list"] = sweep_eps;
            manifest.config()["seeds"] = sweep_seeds;
            manifest.config()["data"] = sweep_data;
            if (sweep_profile_after) manifest.config()["profile"] = sweep_profile.to_json(data.size());
            manifest.result() = results;
            manifest.write(dir / "manifest.json");
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace critmap::cli

// Command-line front end: train/eval/infer plus the synth-data generator and
// a couple of introspection helpers (params, gradcheck). Every subcommand
// accepts --config with flat "key = value" lines or a JSON object; explicit
// command-line flags win over config values, which win over defaults.
//
// Exit codes: 0 success, 2 bad usage or arguments, 3 I/O or file-format
// trouble, 4 numerical failure, 1 anything unexpected.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mscnet/gradcheck.hpp"
#include "mscnet/loss.hpp"
#include "mscnet/trainer.hpp"
#include "mscnet/weights.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mscnet;

namespace {

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Flat config: either a JSON object or "key = value" lines with '#' comments.
std::map<std::string, std::string> read_config_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();

    std::map<std::string, std::string> out;
    const size_t first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw FormatError("config " + path + ": " + e.what());
        }
        if (!j.is_object()) throw FormatError("config " + path + ": expected a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (value.is_string()) {
                out[key] = value.get<std::string>();
            } else if (value.is_boolean()) {
                out[key] = value.get<bool>() ? "true" : "false";
            } else if (value.is_number()) {
                out[key] = value.dump();
            } else {
                throw FormatError("config " + path + ": key '" + key +
                                  "' must be a string, number or bool");
            }
        }
        return out;
    }

    std::istringstream lines(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("config " + path + ":" + std::to_string(lineno) +
                              ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (val.size() >= 2 && val.front() == '"' && val.back() == '"') {
            val = val.substr(1, val.size() - 2);
        }
        if (key.empty()) {
            throw FormatError("config " + path + ":" + std::to_string(lineno) + ": empty key");
        }
        if (out.count(key)) {
            throw FormatError("config " + path + ":" + std::to_string(lineno) +
                              ": duplicate key '" + key + "'");
        }
        out[key] = val;
    }
    return out;
}

uint64_t config_u64(const std::string& key, const std::string& text) {
    size_t used = 0;
    uint64_t v = 0;
    try {
        v = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty()) {
        throw InvalidArgument("config: '" + key + "' wants an unsigned integer, got '" + text +
                              "'");
    }
    return v;
}

double config_double(const std::string& key, const std::string& text) {
    size_t used = 0;
    double v = 0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty()) {
        throw InvalidArgument("config: '" + key + "' wants a number, got '" + text + "'");
    }
    return v;
}

bool config_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw InvalidArgument("config: '" + key + "' wants true/false, got '" + text + "'");
}

// Merges one command's config file under its explicit flags: a config value
// applies only when the matching flag was not given. Every key must belong to
// the command, which keeps typos loud.
class ConfigValues {
public:
    ConfigValues() = default;
    explicit ConfigValues(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    void set_u64(const CLI::Option* opt, const std::string& key, uint64_t& var) {
        if (const std::string* v = claim(opt, key)) var = config_u64(key, *v);
    }
    void set_size(const CLI::Option* opt, const std::string& key, size_t& var) {
        if (const std::string* v = claim(opt, key)) var = (size_t)config_u64(key, *v);
    }
    void set_double(const CLI::Option* opt, const std::string& key, double& var) {
        if (const std::string* v = claim(opt, key)) var = config_double(key, *v);
    }
    void set_bool(const CLI::Option* opt, const std::string& key, bool& var) {
        if (const std::string* v = claim(opt, key)) var = config_bool(key, *v);
    }
    void set_string(const CLI::Option* opt, const std::string& key, std::string& var) {
        if (const std::string* v = claim(opt, key)) var = *v;
    }

    // Rejects keys no setter asked about.
    void finish() const {
        for (const auto& [key, value] : kv_) {
            if (!known_.count(key)) {
                throw InvalidArgument("config: unknown key '" + key + "' for this command");
            }
        }
    }

private:
    const std::string* claim(const CLI::Option* opt, const std::string& key) {
        known_.insert(key);
        const auto it = kv_.find(key);
        if (it == kv_.end() || (opt && opt->count() > 0)) return nullptr;
        return &it->second;
    }

    std::map<std::string, std::string> kv_;
    std::set<std::string> known_;
};

ModelConfig model_config_for(double width) {
    if (width == 0.25) return ModelConfig::desk();
    if (width == 1.0) return ModelConfig::full();
    throw InvalidArgument("width must be 0.25 or 1.0");
}

json metrics_summary(const MetricsReport& r) {
    return json{{"mae", r.mae},
                {"maxF", r.max_f},
                {"maxF_threshold", r.max_f_threshold},
                {"sm", r.sm},
                {"em", r.em}};
}

DatasetSpec dataset_from(const std::string& data, const std::string& split, size_t size) {
    if (data.empty()) throw InvalidArgument("--data is required (synth:... or a manifest file)");
    DatasetSpec spec = parse_dataset_spec(data);
    spec.split = split;
    spec.target_size = size;
    return spec;
}

// Options shared by every subcommand.
struct CommonCli {
    std::string config;
    uint64_t seed = 0;
    double width = 0.25;
    size_t threads = 0;
    CLI::Option* o_seed = nullptr;
    CLI::Option* o_width = nullptr;
    CLI::Option* o_threads = nullptr;

    void attach(CLI::App* cmd, bool with_threads = true) {
        cmd->add_option("--config", config, "flat key=value or JSON config file");
        o_seed = cmd->add_option("--seed", seed, "deterministic run seed");
        o_width = cmd->add_option("--width", width, "channel multiplier, 0.25 or 1.0");
        if (with_threads) {
            o_threads = cmd->add_option("--threads", threads, "evaluation worker threads");
        }
    }

    ConfigValues load(bool with_threads = true) {
        ConfigValues cfg =
            config.empty() ? ConfigValues() : ConfigValues(read_config_map(config));
        cfg.set_u64(o_seed, "seed", seed);
        cfg.set_double(o_width, "width", width);
        if (with_threads) cfg.set_size(o_threads, "threads", threads);
        return cfg;
    }
};

struct TrainCli {
    CommonCli common;
    std::string data, out = "run", weights, split;
    size_t epochs = 40, batch = 6, val_pct = 10, eval_every = 1, size = 0;
    double lr = 1e-4, wd = 5e-4, lambda = 0.6;
    bool no_augment = false, decoupled = false;
    CLI::Option *o_data, *o_out, *o_weights, *o_split, *o_epochs, *o_batch, *o_val_pct,
        *o_eval_every, *o_size, *o_lr, *o_wd, *o_lambda, *o_no_augment, *o_decoupled;

    void attach(CLI::App* cmd) {
        common.attach(cmd);
        o_data = cmd->add_option("--data", data, "dataset: synth:... or manifest path");
        o_out = cmd->add_option("--out", out, "run directory");
        o_weights = cmd->add_option("--weights", weights, "initial weights (resume/fine-tune)");
        o_split = cmd->add_option("--split", split, "manifest split filter");
        o_size = cmd->add_option("--size", size, "resize manifest samples to this square side");
        o_epochs = cmd->add_option("--epochs", epochs, "training epochs");
        o_batch = cmd->add_option("--batch", batch, "batch size");
        o_lr = cmd->add_option("--lr", lr, "peak learning rate (cosine schedule)");
        o_wd = cmd->add_option("--wd", wd, "weight decay");
        o_lambda = cmd->add_option("--lambda", lambda, "IoU loss weight");
        o_val_pct = cmd->add_option("--val-pct", val_pct,
                                    "validation holdout percent; 0 validates on train");
        o_eval_every = cmd->add_option("--eval-every", eval_every, "epochs between validations");
        o_no_augment = cmd->add_flag("--no-augment", no_augment, "disable flips/rotations");
        o_decoupled = cmd->add_flag("--decoupled", decoupled, "decoupled weight decay");
    }

    int run() {
        ConfigValues cfg = common.load();
        cfg.set_string(o_data, "data", data);
        cfg.set_string(o_out, "out", out);
        cfg.set_string(o_weights, "weights", weights);
        cfg.set_string(o_split, "split", split);
        cfg.set_size(o_size, "size", size);
        cfg.set_size(o_epochs, "epochs", epochs);
        cfg.set_size(o_batch, "batch", batch);
        cfg.set_double(o_lr, "lr", lr);
        cfg.set_double(o_wd, "wd", wd);
        cfg.set_double(o_lambda, "lambda", lambda);
        cfg.set_size(o_val_pct, "val-pct", val_pct);
        cfg.set_size(o_eval_every, "eval-every", eval_every);
        bool augment = true;
        cfg.set_bool(nullptr, "augment", augment);
        bool dec = decoupled;
        cfg.set_bool(o_decoupled, "decoupled", dec);
        cfg.finish();
        if (no_augment) augment = false;

        const std::vector<Sample> samples =
            load_dataset(dataset_from(data, split, size));
        MscNet model(model_config_for(common.width), common.seed);
        if (!weights.empty()) load_weights(model, weights);

        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch = batch;
        tc.lr0 = (real)lr;
        tc.weight_decay = (real)wd;
        tc.decoupled_decay = dec;
        tc.lambda = (real)lambda;
        tc.seed = common.seed;
        tc.val_fraction_pct = val_pct;
        tc.eval_every = eval_every;
        tc.threads = common.threads;
        tc.augment = augment;

        const TrainResult res = train(model, tc, samples, out);
        json summary{{"run_dir", res.run_dir},
                     {"epochs", epochs},
                     {"samples", samples.size()},
                     {"best_epoch", res.best_epoch},
                     {"best_val", metrics_summary(res.best_val)},
                     {"final_val", metrics_summary(res.final_val)}};
        std::cout << summary.dump(2) << '\n';
        return 0;
    }
};

struct EvalCli {
    CommonCli common;
    std::string data, weights, out, split;
    size_t size = 0;
    CLI::Option *o_data, *o_weights, *o_out, *o_split, *o_size;

    void attach(CLI::App* cmd) {
        common.attach(cmd);
        o_data = cmd->add_option("--data", data, "dataset: synth:... or manifest path");
        o_weights = cmd->add_option("--weights", weights, "weights file to score");
        o_out = cmd->add_option("--out", out, "directory for metrics.csv and report.json");
        o_split = cmd->add_option("--split", split, "manifest split filter");
        o_size = cmd->add_option("--size", size, "resize manifest samples to this square side");
    }

    int run() {
        ConfigValues cfg = common.load();
        cfg.set_string(o_data, "data", data);
        cfg.set_string(o_weights, "weights", weights);
        cfg.set_string(o_out, "out", out);
        cfg.set_string(o_split, "split", split);
        cfg.set_size(o_size, "size", size);
        cfg.finish();
        if (weights.empty()) throw InvalidArgument("eval: --weights is required");

        const std::vector<Sample> samples =
            load_dataset(dataset_from(data, split, size));
        MscNet model(model_config_for(common.width), common.seed);
        load_weights(model, weights);

        const EvalResult res = evaluate(model, samples, common.threads);
        if (!out.empty()) {
            fs::create_directories(out);
            std::ofstream csv(fs::path(out) / "metrics.csv");
            csv << "id," << MetricsReport::csv_header() << '\n';
            for (size_t i = 0; i < samples.size(); ++i) {
                csv << samples[i].id << ',' << res.per_image[i].csv_row() << '\n';
            }
            csv << "aggregate," << res.aggregate.csv_row() << '\n';
            std::ofstream(fs::path(out) / "report.json") << res.aggregate.to_json() << '\n';
        }
        json summary = metrics_summary(res.aggregate);
        summary["samples"] = samples.size();
        std::cout << summary.dump(2) << '\n';
        return 0;
    }
};

struct InferCli {
    CommonCli common;
    std::string weights, out = "saliency";
    size_t size = 0;
    std::vector<std::string> inputs;
    CLI::Option *o_weights, *o_out, *o_size;

    void attach(CLI::App* cmd) {
        common.attach(cmd, /*with_threads=*/false);
        o_weights = cmd->add_option("--weights", weights, "weights file");
        o_out = cmd->add_option("--out", out, "output directory");
        o_size = cmd->add_option("--size", size,
                                 "working resolution (multiple of 32); 0 rounds up per image");
        cmd->add_option("inputs", inputs, "image files")->required();
    }

    int run() {
        ConfigValues cfg = common.load(/*with_threads=*/false);
        cfg.set_string(o_weights, "weights", weights);
        cfg.set_string(o_out, "out", out);
        cfg.set_size(o_size, "size", size);
        cfg.finish();
        if (weights.empty()) throw InvalidArgument("infer: --weights is required");

        MscNet model(model_config_for(common.width), common.seed);
        load_weights(model, weights);

        const InferResult res = infer(model, inputs, out, size);
        for (const std::string& path : res.written) std::cout << path << '\n';
        for (const auto& [path, reason] : res.failures) {
            std::cerr << "infer: " << path << ": " << reason << '\n';
        }
        return res.failures.empty() ? 0 : 3;
    }
};

struct SynthCli {
    CommonCli common;
    std::string data = "synth", out = "synth-data", split = "train";
    CLI::Option *o_data, *o_out, *o_split;

    void attach(CLI::App* cmd) {
        common.attach(cmd, /*with_threads=*/false);
        o_data = cmd->add_option("--data", data, "synth:... recipe to render");
        o_out = cmd->add_option("--out", out, "output directory");
        o_split = cmd->add_option("--split", split, "split tag written to the manifest");
    }

    int run() {
        ConfigValues cfg = common.load(/*with_threads=*/false);
        cfg.set_string(o_data, "data", data);
        cfg.set_string(o_out, "out", out);
        cfg.set_string(o_split, "split", split);
        cfg.finish();

        const DatasetSpec spec = parse_dataset_spec(data);
        if (!spec.synthetic) throw InvalidArgument("synth: --data must be a synth:... recipe");
        const std::vector<Sample> samples = load_dataset(spec);

        fs::create_directories(out);
        std::ofstream manifest(fs::path(out) / "manifest.tsv");
        if (!manifest) throw IoError("cannot write manifest in " + out);
        for (const Sample& s : samples) {
            const std::string img = s.id + ".png";
            const std::string msk = s.id + "_mask.png";
            save_sample(s, (fs::path(out) / img).string(), (fs::path(out) / msk).string());
            manifest << img << '\t' << msk << '\t' << split << '\n';
        }
        json summary{{"dir", out},
                     {"count", samples.size()},
                     {"manifest", (fs::path(out) / "manifest.tsv").string()}};
        std::cout << summary.dump(2) << '\n';
        return 0;
    }
};

struct GradcheckCli {
    CommonCli common;
    bool with_model = false;

    void attach(CLI::App* cmd) {
        common.attach(cmd, /*with_threads=*/false);
        cmd->add_flag("--model", with_model,
                      "also check a quarter-width model end to end (slow)");
    }

    int run() {
        ConfigValues cfg = common.load(/*with_threads=*/false);
        cfg.finish();
        Rng rng(common.seed + 1);
        bool all_ok = true;

        auto report = [&](const char* name, const GradCheckResult& r, real tol) {
            const bool ok = r.ok(tol);
            all_ok = all_ok && ok;
            std::cout << (ok ? "[ok]   " : "[FAIL] ") << name << ": " << r.describe() << '\n';
        };

        {
            Tensor x(Shape{1, 3, 6, 6});
            Tensor w(Shape{4, 3, 3, 3});
            Tensor b(Shape{4});
            for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = (real)rng.uniform(-1, 1);
            for (size_t i = 0; i < w.numel(); ++i) w.data()[i] = (real)rng.uniform(-0.5, 0.5);
            for (size_t i = 0; i < b.numel(); ++i) b.data()[i] = (real)rng.uniform(-0.2, 0.2);
            x.set_requires_grad(true);
            w.set_requires_grad(true);
            b.set_requires_grad(true);
            auto fn = [&] {
                const Tensor y = sigmoid(conv2d(x, w, b, 1, {1, 1}));
                return mean(mul(y, y));
            };
            report("conv+sigmoid", gradcheck(fn, {{"x", x}, {"w", w}, {"b", b}}), real(1e-4));
        }
        {
            Tensor logits(Shape{2, 1, 5, 5});
            Tensor target(Shape{2, 1, 5, 5});
            for (size_t i = 0; i < logits.numel(); ++i) {
                logits.data()[i] = (real)rng.uniform(-2, 2);
                target.data()[i] = rng.bernoulli(0.5) ? real(1) : real(0);
            }
            logits.set_requires_grad(true);
            auto fn = [&] { return total_loss(sigmoid(logits), target, {}); };
            report("total-loss", gradcheck(fn, {{"logits", logits}}), real(1e-4));
        }
        if (with_model) {
            MscNet model(ModelConfig::desk(), common.seed);
            model.set_training(false);
            // A fresh model sits exactly on relu kinks over whole regions
            // (identity batchnorm, bias-free convolutions, relu-silenced
            // patches), where subgradients and central differences disagree
            // by construction. Move every normalization to a generic point,
            // as the first optimizer step would.
            Rng jitter(common.seed + 4);
            model.visit_state("", [&](const std::string& name, const Tensor& t, bool) {
                auto ends_with = [&](const std::string& s) {
                    return name.size() >= s.size() &&
                           name.compare(name.size() - s.size(), s.size(), s) == 0;
                };
                Tensor v = t;
                double lo = 0, hi = 0;
                if (ends_with(".gamma")) lo = 0.8, hi = 1.2;
                else if (ends_with(".beta") || ends_with(".running_mean")) lo = -0.2, hi = 0.2;
                else if (ends_with(".running_var")) lo = 0.7, hi = 1.5;
                else return;
                for (size_t i = 0; i < v.numel(); ++i) v[i] = (real)jitter.uniform(lo, hi);
            });
            Tensor x(Shape{1, 3, 32, 32});
            Tensor target(Shape{1, 1, 32, 32});
            Rng mrng(common.seed + 2);
            for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = (real)mrng.uniform(0, 1);
            for (size_t i = 0; i < target.numel(); ++i) {
                target.data()[i] = mrng.bernoulli(0.4) ? real(1) : real(0);
            }
            std::vector<std::pair<std::string, Tensor>> wrt;
            for (const StateEntry& se : collect_state(model)) {
                if (se.learnable) wrt.emplace_back(se.name, se.tensor);
            }
            GradCheckOptions opts;
            opts.max_coords_per_tensor = 1;
            opts.seed = common.seed + 3;
            // Tighter step than the default: many gradients here are O(1e-5),
            // where 1e-5 truncation noise alone would breach the tolerance.
            opts.eps = real(1e-6);
            auto fn = [&] { return total_loss(model.forward(x), target, {}); };
            report("model", gradcheck(fn, wrt, opts), real(1e-3));
        }
        if (!all_ok) throw NumericalError("gradcheck: tolerance exceeded");
        return 0;
    }
};

struct ParamsCli {
    CommonCli common;

    void attach(CLI::App* cmd) { common.attach(cmd, /*with_threads=*/false); }

    int run() {
        ConfigValues cfg = common.load(/*with_threads=*/false);
        cfg.finish();
        const MscNet model(model_config_for(common.width), common.seed);
        const ParamCensus census = census_params(model);
        json groups = json::object();
        for (const auto& [prefix, count] : census.by_prefix) groups[prefix] = count;
        json summary{{"width", common.width}, {"total", census.total}, {"groups", groups}};
        std::cout << summary.dump(2) << '\n';
        return 0;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"salient-object detection: lightweight multi-scale context network"};
    app.require_subcommand(1);

    TrainCli train_cli;
    EvalCli eval_cli;
    InferCli infer_cli;
    SynthCli synth_cli;
    GradcheckCli gradcheck_cli;
    ParamsCli params_cli;

    CLI::App* c_train = app.add_subcommand("train", "train a model and write a run directory");
    CLI::App* c_eval = app.add_subcommand("eval", "score weights against a dataset");
    CLI::App* c_infer = app.add_subcommand("infer", "write saliency maps for image files");
    CLI::App* c_synth = app.add_subcommand("synth", "render a procedural dataset to disk");
    CLI::App* c_gradcheck =
        app.add_subcommand("gradcheck", "compare tape gradients with finite differences");
    CLI::App* c_params = app.add_subcommand("params", "print the learnable-parameter census");

    train_cli.attach(c_train);
    eval_cli.attach(c_eval);
    infer_cli.attach(c_infer);
    synth_cli.attach(c_synth);
    gradcheck_cli.attach(c_gradcheck);
    params_cli.attach(c_params);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(c_train)) return train_cli.run();
        if (app.got_subcommand(c_eval)) return eval_cli.run();
        if (app.got_subcommand(c_infer)) return infer_cli.run();
        if (app.got_subcommand(c_synth)) return synth_cli.run();
        if (app.got_subcommand(c_gradcheck)) return gradcheck_cli.run();
        if (app.got_subcommand(c_params)) return params_cli.run();
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const StateError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << '\n';
        return 1;
    }
}

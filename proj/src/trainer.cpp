#include "mscnet/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>
#include <utility>

#include "json.hpp"
#include "mscnet/loss.hpp"
#include "mscnet/optimizer.hpp"
#include "mscnet/weights.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mscnet {
namespace {

uint64_t parse_u64(const std::string& key, const std::string& text) {
    size_t used = 0;
    uint64_t v = 0;
    try {
        v = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty()) {
        throw InvalidArgument("dataset spec: '" + key + "' wants an unsigned integer, got '" +
                              text + "'");
    }
    return v;
}

real parse_real(const std::string& key, const std::string& text) {
    size_t used = 0;
    double v = 0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty()) {
        throw InvalidArgument("dataset spec: '" + key + "' wants a number, got '" + text + "'");
    }
    return (real)v;
}

// Restores the model's train/eval flag on scope exit.
struct TrainingModeGuard {
    MscNet& model;
    bool prev;
    TrainingModeGuard(MscNet& m, bool on) : model(m), prev(m.training()) { model.set_training(on); }
    ~TrainingModeGuard() { model.set_training(prev); }
    TrainingModeGuard(const TrainingModeGuard&) = delete;
    TrainingModeGuard& operator=(const TrainingModeGuard&) = delete;
};

std::ofstream open_for_write(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

void check_sample(const Sample& s, size_t index) {
    if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.mask.rank() != 3 || s.mask.dim(0) != 1 ||
        s.image.dim(1) != s.mask.dim(1) || s.image.dim(2) != s.mask.dim(2)) {
        throw InvalidArgument("sample " + std::to_string(index) + " (" + s.id +
                              "): expected image [3,H,W] with matching mask [1,H,W]");
    }
}

json metrics_json(const MetricsReport& r) {
    return json{{"mae", r.mae},
                {"maxF", r.max_f},
                {"maxF_threshold", r.max_f_threshold},
                {"sm", r.sm},
                {"em", r.em}};
}

// Deterministic in-place Fisher-Yates driven by the given stream.
void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i) {
        std::swap(idx[i - 1], idx[(size_t)rng.integer(i)]);
    }
}

std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ", ";
        out += ids[i];
    }
    return out;
}

size_t round_up_32(size_t x) { return ((std::max<size_t>(x, 1) + 31) / 32) * 32; }

}  // namespace

DatasetSpec parse_dataset_spec(const std::string& text) {
    if (text.empty()) throw InvalidArgument("dataset spec is empty");
    DatasetSpec spec;
    if (text != "synth" && text.rfind("synth:", 0) != 0) {
        spec.manifest_path = text;
        return spec;
    }

    spec.synthetic = true;
    const std::string body = text == "synth" ? std::string() : text.substr(6);
    size_t pos = 0;
    while (pos <= body.size() && !body.empty()) {
        size_t end = body.find(',', pos);
        if (end == std::string::npos) end = body.size();
        const std::string kv = body.substr(pos, end - pos);
        pos = end + 1;
        const size_t eq = kv.find('=');
        if (kv.empty() || eq == std::string::npos || eq == 0) {
            throw InvalidArgument("dataset spec: expected key=value, got '" + kv + "'");
        }
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        if (key == "count") {
            spec.count = parse_u64(key, val);
        } else if (key == "size") {
            spec.scene.size = parse_u64(key, val);
        } else if (key == "seed") {
            spec.scene.seed = parse_u64(key, val);
        } else if (key == "small") {
            spec.scene.n_small = parse_u64(key, val);
        } else if (key == "large") {
            spec.scene.n_large = parse_u64(key, val);
        } else if (key == "slender") {
            const uint64_t v = parse_u64(key, val);
            if (v > 1) throw InvalidArgument("dataset spec: 'slender' wants 0 or 1");
            spec.scene.slender = v == 1;
        } else if (key == "clutter") {
            spec.scene.clutter = parse_real(key, val);
        } else if (key == "bg") {
            spec.scene.bg_level = parse_real(key, val);
        } else if (key == "contrast") {
            spec.scene.contrast = parse_real(key, val);
        } else {
            throw InvalidArgument("dataset spec: unknown key '" + key + "'");
        }
        if (pos > body.size()) break;
    }
    return spec;
}

std::vector<Sample> load_dataset(const DatasetSpec& spec) {
    std::vector<Sample> out;
    if (spec.synthetic) {
        if (spec.count == 0) throw InvalidArgument("load_dataset: synthetic count must be >= 1");
        out.reserve(spec.count);
        for (size_t i = 0; i < spec.count; ++i) {
            SceneSpec scene = spec.scene;
            scene.seed = spec.scene.seed + i;
            out.push_back(synth_scene(scene));
        }
        return out;
    }

    const std::vector<ManifestEntry> entries = load_manifest(spec.manifest_path);
    for (const ManifestEntry& e : entries) {
        if (!spec.split.empty() && e.split != spec.split) continue;
        const std::string id = fs::path(e.image_path).stem().string();
        out.push_back(load_sample(e.image_path, e.mask_path, spec.target_size, id));
    }
    if (out.empty()) {
        throw InvalidArgument("load_dataset: no entries" +
                              (spec.split.empty() ? std::string()
                                                  : " with split '" + spec.split + "'") +
                              " in " + spec.manifest_path);
    }
    return out;
}

EvalResult evaluate(MscNet& model, const std::vector<Sample>& samples, size_t threads) {
    if (samples.empty()) throw InvalidArgument("evaluate: no samples");
    for (size_t i = 0; i < samples.size(); ++i) check_sample(samples[i], i);

    TrainingModeGuard guard(model, false);
    EvalResult result;
    result.per_image.resize(samples.size());

    auto run_one = [&](size_t i) {
        NoGradGuard no_grad;
        const Sample& s = samples[i];
        const size_t h = s.image.dim(1), w = s.image.dim(2);
        const Tensor input = Tensor::from_data({1, 3, h, w}, s.image.values());
        const Tensor pred = model.forward(input);
        const Tensor target = Tensor::from_data({1, 1, h, w}, s.mask.values());
        result.per_image[i] = evaluate_pair(pred, target);
    };

    const size_t workers = std::min(std::max<size_t>(threads, 1), samples.size());
    if (workers <= 1) {
        for (size_t i = 0; i < samples.size(); ++i) run_one(i);
    } else {
        std::atomic<size_t> next{0};
        std::mutex err_mu;
        std::exception_ptr err;
        auto work = [&] {
            while (true) {
                const size_t i = next.fetch_add(1);
                if (i >= samples.size()) break;
                try {
                    run_one(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!err) err = std::current_exception();
                    break;
                }
            }
        };
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (size_t t = 0; t < workers; ++t) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
        if (err) std::rethrow_exception(err);
    }

    result.aggregate = aggregate_reports(result.per_image);
    return result;
}

TrainResult train(MscNet& model, const TrainConfig& cfg, const std::vector<Sample>& data,
                  const std::string& out_dir) {
    if (cfg.epochs == 0 || cfg.batch == 0 || cfg.eval_every == 0) {
        throw InvalidArgument("train: epochs, batch and eval_every must be >= 1");
    }
    if (!(cfg.lr0 > real(0)) || !std::isfinite(cfg.lr0) || !(cfg.weight_decay >= real(0)) ||
        !(cfg.lambda >= real(0))) {
        throw InvalidArgument("train: lr0 must be positive, weight_decay and lambda nonnegative");
    }
    if (cfg.val_fraction_pct > 50) {
        throw InvalidArgument("train: val_fraction_pct must be at most 50");
    }
    if (data.empty()) throw InvalidArgument("train: empty dataset");
    for (size_t i = 0; i < data.size(); ++i) {
        check_sample(data[i], i);
        if (data[i].image.dim(1) != data[0].image.dim(1) ||
            data[i].image.dim(2) != data[0].image.dim(2)) {
            throw InvalidArgument("train: sample " + data[i].id + " is " +
                                  std::to_string(data[i].image.dim(1)) + "x" +
                                  std::to_string(data[i].image.dim(2)) + " but sample " +
                                  data[0].id + " is " + std::to_string(data[0].image.dim(1)) +
                                  "x" + std::to_string(data[0].image.dim(2)) +
                                  "; batching needs one resolution");
        }
    }

    const size_t n = data.size();
    const size_t h = data[0].image.dim(1), w = data[0].image.dim(2);

    Rng root(cfg.seed);
    Rng split_rng = root.fork();

    // Held-out split. With val_fraction_pct == 0 the validation view simply
    // aliases the training set.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    size_t val_count = 0;
    if (cfg.val_fraction_pct > 0) {
        shuffle_indices(order, split_rng);
        val_count = std::max<size_t>(n * cfg.val_fraction_pct / 100, 1);
        if (val_count >= n) {
            throw InvalidArgument("train: need at least 2 samples to hold out a validation set");
        }
    }
    std::vector<Sample> val_set, train_set;
    for (size_t i = 0; i < val_count; ++i) val_set.push_back(data[order[i]]);
    for (size_t i = val_count; i < n; ++i) train_set.push_back(data[order[i]]);
    const std::vector<Sample>& val_view = val_set.empty() ? train_set : val_set;

    fs::create_directories(out_dir);
    const fs::path run_dir(out_dir);
    {
        json c{{"epochs", cfg.epochs},
               {"batch", cfg.batch},
               {"lr0", cfg.lr0},
               {"weight_decay", cfg.weight_decay},
               {"decoupled_decay", cfg.decoupled_decay},
               {"lambda", cfg.lambda},
               {"seed", cfg.seed},
               {"val_fraction_pct", cfg.val_fraction_pct},
               {"eval_every", cfg.eval_every},
               {"threads", cfg.threads},
               {"augment", cfg.augment},
               {"alpha", model.config().alpha},
               {"decoder_width", model.config().decoder_width},
               {"input_size", {h, w}},
               {"dataset_size", n},
               {"train_size", train_set.size()},
               {"val_size", val_view.size()}};
        open_for_write(run_dir / "config.json") << c.dump(2) << '\n';
    }
    std::ofstream log = open_for_write(run_dir / "log.jsonl");

    std::vector<Tensor> params;
    for (const StateEntry& se : collect_state(model)) {
        if (se.learnable) params.push_back(se.tensor);
    }
    AdamConfig acfg;
    acfg.lr = cfg.lr0;
    acfg.weight_decay = cfg.weight_decay;
    acfg.decoupled_decay = cfg.decoupled_decay;
    Adam opt(params, acfg);

    LossConfig loss_cfg;
    loss_cfg.lambda = cfg.lambda;

    TrainResult result;
    result.run_dir = run_dir.string();
    real best_max_f = real(-1);

    std::vector<size_t> train_order(train_set.size());
    std::iota(train_order.begin(), train_order.end(), size_t{0});

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const real lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
        Rng epoch_rng = root.fork();
        shuffle_indices(train_order, epoch_rng);

        model.set_training(true);
        real loss_sum = 0;
        for (size_t start = 0; start < train_order.size(); start += cfg.batch) {
            const size_t bsz = std::min(cfg.batch, train_order.size() - start);
            std::vector<real> images(bsz * 3 * h * w);
            std::vector<real> masks(bsz * h * w);
            std::vector<std::string> batch_ids(bsz);
            for (size_t b = 0; b < bsz; ++b) {
                const Sample& base = train_set[train_order[start + b]];
                const Sample s = cfg.augment ? augment(base, epoch_rng) : base;
                batch_ids[b] = base.id;
                std::copy(s.image.values().begin(), s.image.values().end(),
                          images.begin() + b * 3 * h * w);
                std::copy(s.mask.values().begin(), s.mask.values().end(),
                          masks.begin() + b * h * w);
            }
            const Tensor batch_x = Tensor::from_data({bsz, 3, h, w}, std::move(images));
            const Tensor batch_y = Tensor::from_data({bsz, 1, h, w}, std::move(masks));

            real loss_value;
            {
                TapeScope tape;
                const Tensor pred = model.forward(batch_x);
                const Tensor loss = total_loss(pred, batch_y, loss_cfg);
                loss_value = loss.item();
                if (!std::isfinite(loss_value)) {
                    json dump{{"epoch", epoch},
                              {"batch_start", start},
                              {"loss", "non-finite"},
                              {"sample_ids", batch_ids}};
                    open_for_write(run_dir / "abort.json") << dump.dump(2) << '\n';
                    throw NumericalError("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch of [" +
                                         join_ids(batch_ids) + "]; details in " +
                                         (run_dir / "abort.json").string());
                }
                backward(loss);
            }
            opt.step(lr);
            opt.zero_grad();
            loss_sum += loss_value * (real)bsz;
        }
        const real train_loss = loss_sum / (real)train_set.size();
        result.train_loss.push_back(train_loss);

        json line{{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}};
        const bool do_eval = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        if (do_eval) {
            const EvalResult ev = evaluate(model, val_view, cfg.threads);
            line["val"] = metrics_json(ev.aggregate);
            if (ev.aggregate.max_f > best_max_f) {
                best_max_f = ev.aggregate.max_f;
                result.best_epoch = epoch;
                result.best_val = ev.aggregate;
                save_weights(model, (run_dir / "best.mscw").string());
            }
            if (epoch + 1 == cfg.epochs) {
                result.final_val = ev.aggregate;
                std::ofstream csv = open_for_write(run_dir / "metrics.csv");
                csv << "id," << MetricsReport::csv_header() << '\n';
                for (size_t i = 0; i < val_view.size(); ++i) {
                    csv << val_view[i].id << ',' << ev.per_image[i].csv_row() << '\n';
                }
                csv << "aggregate," << ev.aggregate.csv_row() << '\n';
            }
        }
        log << line.dump() << '\n';
        log.flush();
    }

    save_weights(model, (run_dir / "final.mscw").string());
    return result;
}

InferResult infer(MscNet& model, const std::vector<std::string>& image_paths,
                  const std::string& out_dir, size_t target_size) {
    if (image_paths.empty()) throw InvalidArgument("infer: no input images");
    if (target_size != 0 && target_size % 32 != 0) {
        throw InvalidArgument("infer: target_size must be a multiple of 32");
    }
    fs::create_directories(out_dir);

    TrainingModeGuard guard(model, false);
    NoGradGuard no_grad;
    InferResult result;
    for (const std::string& path : image_paths) {
        try {
            const Image img = read_image(path);
            const Tensor native = image_to_tensor(img);
            const size_t nh = native.dim(1), nw = native.dim(2);
            const size_t rh = target_size ? target_size : round_up_32(nh);
            const size_t rw = target_size ? target_size : round_up_32(nw);

            std::vector<real> buf(3 * rh * rw);
            for (size_t c = 0; c < 3; ++c) {
                const std::vector<real> plane =
                    resize_bilinear(native.data() + c * nh * nw, nh, nw, rh, rw);
                std::copy(plane.begin(), plane.end(), buf.begin() + c * rh * rw);
            }
            const Tensor input = Tensor::from_data({1, 3, rh, rw}, std::move(buf));
            const Tensor pred = model.forward(input);
            const std::vector<real> back = resize_bilinear(pred.data(), rh, rw, nh, nw);
            const Tensor map = Tensor::from_data({1, nh, nw}, back);

            const fs::path out_path =
                fs::path(out_dir) / (fs::path(path).stem().string() + "_sal.png");
            write_image(out_path.string(), tensor_to_image(map));
            result.written.push_back(out_path.string());
        } catch (const std::exception& e) {
            result.failures.emplace_back(path, e.what());
        }
    }
    return result;
}

}  // namespace mscnet

#pragma once

#include <string>
#include <vector>

#include "mscnet/data.hpp"
#include "mscnet/metrics.hpp"
#include "mscnet/model.hpp"

namespace mscnet {

// Dataset selector: either a procedural batch ("synth:count=8,size=64,seed=1,
// small=2,large=1,slender=0,clutter=0.3,bg=0.5,contrast=0.35", every key
// optional) or a manifest file path. Split filtering and resizing apply to
// manifest datasets only.
struct DatasetSpec {
    bool synthetic = false;

    size_t count = 8;  // number of rendered scenes; scene i uses seed + i
    SceneSpec scene;

    std::string manifest_path;
    std::string split;       // empty = keep every entry
    size_t target_size = 0;  // 0 = native resolution
};

DatasetSpec parse_dataset_spec(const std::string& text);
std::vector<Sample> load_dataset(const DatasetSpec& spec);

struct TrainConfig {
    size_t epochs = 40;
    size_t batch = 6;
    real lr0 = real(1e-4);
    real weight_decay = real(5e-4);
    bool decoupled_decay = false;
    real lambda = real(0.6);  // IoU term weight in the total loss
    uint64_t seed = 0;
    // Percentage of samples held out for validation (deterministic split).
    // 0 validates on the training set itself, which is what overfit smoke
    // runs want.
    size_t val_fraction_pct = 10;
    size_t eval_every = 1;  // epochs between validation passes
    size_t threads = 0;     // evaluation parallelism; 0 or 1 = sequential
    bool augment = true;
};

// Per-image reports in dataset order plus the dataset-level aggregate.
struct EvalResult {
    std::vector<MetricsReport> per_image;
    MetricsReport aggregate;
};

// Runs the model over each sample (batch of one) in eval mode and scores the
// predictions. The model's training flag is restored afterwards. `threads`
// workers split the samples; results are identical to the sequential order.
EvalResult evaluate(MscNet& model, const std::vector<Sample>& samples, size_t threads = 0);

struct TrainResult {
    std::string run_dir;
    size_t best_epoch = 0;       // epoch index with the best validation max-F
    MetricsReport best_val;      // aggregate at that epoch
    MetricsReport final_val;     // aggregate after the last epoch
    std::vector<real> train_loss;  // one mean loss per epoch
};

// Full training loop. Writes into out_dir (created if needed):
//   config.json   resolved configuration and split sizes
//   log.jsonl     one line per epoch: lr, mean train loss, val metrics
//   best.mscw     weights at the best validation max-F seen so far
//   final.mscw    weights after the last epoch
//   metrics.csv   per-image validation rows plus an aggregate row
// Runs are bit-reproducible for a fixed config and dataset. A non-finite
// batch loss aborts with NumericalError after dumping the offending batch's
// sample ids to abort.json.
TrainResult train(MscNet& model, const TrainConfig& cfg, const std::vector<Sample>& data,
                  const std::string& out_dir);

struct InferResult {
    std::vector<std::string> written;                       // output paths
    std::vector<std::pair<std::string, std::string>> failures;  // input, reason
};

// Saliency maps for arbitrary image files: each input is resized to a
// multiple-of-32 working resolution (target_size, or the native size rounded
// up), pushed through the model, resized back, and written to out_dir as
// "<stem>_sal.png". Unreadable inputs are reported in `failures` and skipped
// rather than aborting the batch.
InferResult infer(MscNet& model, const std::vector<std::string>& image_paths,
                  const std::string& out_dir, size_t target_size = 0);

}  // namespace mscnet

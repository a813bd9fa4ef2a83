#pragma once

// Rate-distortion training of the two-layer codec: the alpha-weighted loss,
// a plateau learning-rate schedule, crop/batch assembly, the training loop,
// and the lambda/alpha sweep harness.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "flic/image.hpp"
#include "flic/model.hpp"

namespace flic::training {

enum class Metric { mse, ms_ssim };

std::string to_string(Metric m);
Metric parse_metric(const std::string& s);

struct LossConfig {
  double lambda = 0.01;
  double alpha = 0.0;
  Metric metric = Metric::mse;

  void validate() const;
};

/// 2^n * 0.01 for n = 3 down to -3.
std::vector<double> lambda_grid();
std::vector<double> alpha_grid();

/// Batch means. Rates are bits per pixel.
struct LossParts {
  double rate_low = 0;
  double rate_high = 0;
  double dist_full = 0;
  double dist_base = 0;
  double total = 0;
};

template <typename T>
struct Loss {
  Var<T> total;
  Var<T> rate_low, rate_high, dist_full, dist_base;
  LossParts parts;
};

/// mse: 255^2 * mean squared error (so lambda matches the usual 8-bit
/// scale). ms_ssim: 1 - ms_ssim.
template <typename T>
Var<T> distortion(const Var<T>& x, const Var<T>& xhat, Metric metric);

/// rate + lambda * (dist_full + alpha * dist_base) over a [N,3,H,W] batch,
/// where each term is the batch mean and the base reconstruction reuses the
/// quantised low latent with the high latent zeroed. Noise quantisation
/// needs an rng; round quantisation ignores it.
template <typename T>
Loss<T> rd_loss(const Tensor<T>& batch, const FlicModelT<T>& m, const LossConfig& cfg,
                entropy::QuantizeMode mode, Rng* rng);

/// Reduce-on-plateau: inert for the first `warmup_epochs` calls, then
/// multiplies the rate by `factor` after `patience` consecutive epochs
/// without a relative improvement larger than `threshold`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, int warmup_epochs = 30, int patience = 4,
                   double threshold = 1e-4, double factor = 0.1);

  /// Records the validation loss of the epoch just finished; returns the
  /// learning rate for the next one.
  double step(double val_loss);

  double lr() const { return lr_; }
  int epoch() const { return epoch_; }
  int bad_epochs() const { return bad_epochs_; }

 private:
  double lr_;
  int warmup_;
  int patience_;
  double threshold_;
  double factor_;
  int epoch_ = 0;
  int bad_epochs_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct TrainConfig {
  LossConfig loss;
  FlicConfig model = FlicConfig::toy();
  double lr = 1e-4;
  std::size_t batch = 8;
  std::size_t crop = 64;
  long steps = 500;
  std::uint64_t seed = 1;
  int warmup_epochs = 30;
  int patience = 4;
  double plateau_threshold = 1e-4;
  double lr_factor = 0.1;
  std::size_t val_images = 2;
  /// A directory of .ppm/.png files, or "synthetic:N" for N generated images.
  std::string dataset = "synthetic:16";
  std::string trace_path;
  std::string checkpoint_path;
  long checkpoint_every = 0;

  void validate() const;
  /// key = value lines; '#' starts a comment. Unknown keys are errors.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// Smooth colour gradients with hard-edged rectangles and stripes.
std::vector<RgbImage> synthetic_dataset(std::size_t count, std::size_t size, std::uint64_t seed);
/// Every .ppm/.png file in `dir`, in file-name order.
std::vector<RgbImage> load_dataset(const std::filesystem::path& dir);

struct Crop {
  std::size_t image = 0, y = 0, x = 0;
  bool operator==(const Crop&) const = default;
};

/// One random crop per image in shuffled order: one epoch.
std::vector<Crop> crop_manifest(const std::vector<RgbImage>& images, std::size_t crop, Rng& rng);

/// [N,3,crop,crop] in [0,1].
Tensor<float> make_batch(const std::vector<RgbImage>& images, std::span<const Crop> crops,
                         std::size_t crop);

struct StepRecord {
  long step = 0;
  LossParts parts;
  double lr = 0;
};

struct EpochRecord {
  int epoch = 0;
  long step = 0;
  double val_loss = 0;
  double lr = 0;
};

struct TrainResult {
  FlicModel model;
  std::vector<StepRecord> trace;
  std::vector<EpochRecord> epochs;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Deterministic given the config and datasets. Validation (round
/// quantisation, centre crops) runs at each epoch end when `val` is non-empty.
TrainResult train(const std::vector<RgbImage>& data, const std::vector<RgbImage>& val,
                  const TrainConfig& cfg, const StepCallback& on_step = {});

struct DatasetSplit {
  std::vector<RgbImage> train, val;
};

/// Resolves cfg.dataset and holds out the last cfg.val_images images.
DatasetSplit resolve_dataset(const TrainConfig& cfg);

/// train() on resolve_dataset(cfg).
TrainResult train(const TrainConfig& cfg, const StepCallback& on_step = {});

void write_trace_csv(std::ostream& out, const std::vector<StepRecord>& trace);

/// Actual coded rates and decoded quality over a set of images.
struct Evaluation {
  double bpp_base = 0;
  double bpp_enh = 0;
  double psnr_full = 0;
  double psnr_base = 0;
  double mse_full = 0;
  double mse_base = 0;
  double base_fraction() const;
};

Evaluation evaluate(const FlicModel& m, const std::vector<RgbImage>& images);

struct SweepCell {
  double lambda = 0;
  double alpha = 0;
  Evaluation eval;
};

/// Trains one model per (lambda, alpha) from the same seed and data.
std::vector<SweepCell> alpha_sweep(const std::vector<RgbImage>& data,
                                   const std::vector<RgbImage>& val, const TrainConfig& base,
                                   const std::vector<double>& lambdas,
                                   const std::vector<double>& alphas,
                                   const std::function<void(const SweepCell&)>& on_cell = {});

void write_sweep_table(std::ostream& out, const std::vector<SweepCell>& cells);
void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells);

}  // namespace flic::training

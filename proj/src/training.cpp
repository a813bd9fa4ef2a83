#include "flic/training.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "flic/codec.hpp"
#include "flic/metrics.hpp"

namespace flic::training {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  require(r.ec == std::errc() && r.ptr == v.data() + v.size(),
          "config: cannot parse '" + v + "' for " + key);
  return out;
}

template <typename T>
Tensor<T> batch_item(const Tensor<T>& batch, std::size_t i) {
  const Shape s{batch.dim(1), batch.dim(2), batch.dim(3)};
  const std::size_t n = shape_numel(s);
  return Tensor<T>(s, std::vector<T>(batch.data() + i * n, batch.data() + (i + 1) * n));
}

}  // namespace

std::string to_string(Metric m) { return m == Metric::mse ? "mse" : "ms_ssim"; }

Metric parse_metric(const std::string& s) {
  if (s == "mse") return Metric::mse;
  if (s == "ms_ssim" || s == "ms-ssim") return Metric::ms_ssim;
  throw std::invalid_argument("unknown distortion metric '" + s + "' (mse or ms_ssim)");
}

void LossConfig::validate() const {
  require(lambda > 0 && std::isfinite(lambda), "lambda must be positive, got " + fmt(lambda));
  require(alpha >= 0 && std::isfinite(alpha), "alpha must be non-negative, got " + fmt(alpha));
}

std::vector<double> lambda_grid() {
  std::vector<double> g;
  for (int n = 3; n >= -3; --n) g.push_back(std::ldexp(0.01, n));
  return g;
}

std::vector<double> alpha_grid() { return {0.1, 0.01, 0.001, 0.0001, 0.0}; }

template <typename T>
Var<T> distortion(const Var<T>& x, const Var<T>& xhat, Metric metric) {
  if (metric == Metric::mse) return scale(mean(square(sub(x, xhat))), T(255.0 * 255.0));
  return add_scalar(scale(ms_ssim(x, xhat), T(-1)), T(1));
}

template <typename T>
Loss<T> rd_loss(const Tensor<T>& batch, const FlicModelT<T>& m, const LossConfig& cfg,
                entropy::QuantizeMode mode, Rng* rng) {
  cfg.validate();
  require(batch.rank() == 4 && batch.dim(0) > 0,
          "rd_loss: expected a [N,3,H,W] batch, got " + shape_str(batch.shape()));
  const std::size_t n = batch.dim(0);
  const T pixels = static_cast<T>(batch.dim(2) * batch.dim(3));
  Var<T> rate_l, rate_h, dist_full, dist_base;
  auto accumulate = [](Var<T>& acc, const Var<T>& v) { acc = acc.valid() ? add(acc, v) : v; };
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = Var<T>::constant(batch_item(batch, i));
    const auto y = analyze(x, m);
    const auto yl = entropy::quantize(y.low, mode, rng);
    const auto yh = entropy::quantize(y.high, mode, rng);
    accumulate(rate_l, scale(entropy::rate_bits(yl, m.density_low), T(1) / pixels));
    accumulate(rate_h, scale(entropy::rate_bits(yh, m.density_high), T(1) / pixels));
    const auto full = synthesize<T>({yl, yh}, m, batch.dim(2), batch.dim(3));
    const auto zero = Var<T>::constant(Tensor<T>(yh.shape()));
    const auto base = synthesize<T>({yl, zero}, m, batch.dim(2), batch.dim(3));
    accumulate(dist_full, distortion(x, full, cfg.metric));
    accumulate(dist_base, distortion(x, base, cfg.metric));
  }
  const T inv = T(1) / static_cast<T>(n);
  rate_l = scale(rate_l, inv);
  rate_h = scale(rate_h, inv);
  dist_full = scale(dist_full, inv);
  dist_base = scale(dist_base, inv);
  // Grouped so that loss(alpha) == loss(0) + (lambda*alpha) * dist_base exactly.
  const auto anchor = add(add(rate_l, rate_h), scale(dist_full, static_cast<T>(cfg.lambda)));
  Loss<T> out;
  out.total = add(anchor, scale(dist_base, static_cast<T>(cfg.lambda * cfg.alpha)));
  out.rate_low = rate_l;
  out.rate_high = rate_h;
  out.dist_full = dist_full;
  out.dist_base = dist_base;
  out.parts.rate_low = rate_l.value().item();
  out.parts.rate_high = rate_h.value().item();
  out.parts.dist_full = dist_full.value().item();
  out.parts.dist_base = dist_base.value().item();
  out.parts.total = out.total.value().item();
  return out;
}

PlateauScheduler::PlateauScheduler(double lr, int warmup_epochs, int patience, double threshold,
                                   double factor)
    : lr_(lr), warmup_(warmup_epochs), patience_(patience), threshold_(threshold),
      factor_(factor) {
  require(lr > 0, "scheduler: learning rate must be positive");
  require(warmup_epochs >= 0 && patience >= 1, "scheduler: bad warmup or patience");
  require(threshold >= 0 && factor > 0 && factor < 1, "scheduler: bad threshold or factor");
}

double PlateauScheduler::step(double val_loss) {
  ++epoch_;
  if (epoch_ <= warmup_) return lr_;
  if (val_loss < best_ * (1.0 - threshold_) || !std::isfinite(best_)) {
    best_ = val_loss;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ >= patience_) {
    lr_ *= factor_;
    bad_epochs_ = 0;
  }
  return lr_;
}

void TrainConfig::validate() const {
  loss.validate();
  model.validate();
  require(lr > 0, "lr must be positive");
  require(batch >= 1, "batch must be at least 1");
  require(crop >= model.downsampling(), "crop " + std::to_string(crop) +
                                            " is smaller than the downsampling factor " +
                                            std::to_string(model.downsampling()));
  require(loss.metric != Metric::ms_ssim || crop >= 16, "ms_ssim needs crops of at least 16");
  require(steps >= 0, "steps must be non-negative");
  require(checkpoint_every >= 0, "checkpoint_every must be non-negative");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (key == "lambda") c.loss.lambda = parse_number<double>(key, v);
    else if (key == "alpha") c.loss.alpha = parse_number<double>(key, v);
    else if (key == "metric") c.loss.metric = parse_metric(v);
    else if (key == "stages") c.model.stages = parse_number<int>(key, v);
    else if (key == "channels") {
      c.model.channels.clear();
      std::istringstream parts(v);
      std::string item;
      while (std::getline(parts, item, ',')) {
        c.model.channels.push_back(parse_number<std::size_t>(key, trim(item)));
      }
    } else if (key == "lrelu_slope") c.model.lrelu_slope = parse_number<double>(key, v);
    else if (key == "lr") c.lr = parse_number<double>(key, v);
    else if (key == "batch") c.batch = parse_number<std::size_t>(key, v);
    else if (key == "crop") c.crop = parse_number<std::size_t>(key, v);
    else if (key == "steps") c.steps = parse_number<long>(key, v);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "warmup_epochs") c.warmup_epochs = parse_number<int>(key, v);
    else if (key == "patience") c.patience = parse_number<int>(key, v);
    else if (key == "plateau_threshold") c.plateau_threshold = parse_number<double>(key, v);
    else if (key == "lr_factor") c.lr_factor = parse_number<double>(key, v);
    else if (key == "val_images") c.val_images = parse_number<std::size_t>(key, v);
    else if (key == "dataset") c.dataset = v;
    else if (key == "trace_path") c.trace_path = v;
    else if (key == "checkpoint_path") c.checkpoint_path = v;
    else if (key == "checkpoint_every") c.checkpoint_every = parse_number<long>(key, v);
    else throw std::invalid_argument("config line " + std::to_string(lineno) +
                                     ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o << "lambda = " << fmt(loss.lambda) << "\nalpha = " << fmt(loss.alpha)
    << "\nmetric = " << to_string(loss.metric) << "\nstages = " << model.stages
    << "\nchannels = ";
  for (std::size_t i = 0; i < model.channels.size(); ++i) {
    o << (i ? "," : "") << model.channels[i];
  }
  o << "\nlrelu_slope = " << fmt(model.lrelu_slope) << "\nlr = " << fmt(lr)
    << "\nbatch = " << batch << "\ncrop = " << crop << "\nsteps = " << steps
    << "\nseed = " << seed << "\nwarmup_epochs = " << warmup_epochs
    << "\npatience = " << patience << "\nplateau_threshold = " << fmt(plateau_threshold)
    << "\nlr_factor = " << fmt(lr_factor) << "\nval_images = " << val_images
    << "\ndataset = " << dataset << "\n";
  if (!trace_path.empty()) o << "trace_path = " << trace_path << "\n";
  if (!checkpoint_path.empty()) o << "checkpoint_path = " << checkpoint_path << "\n";
  o << "checkpoint_every = " << checkpoint_every << "\n";
  return o.str();
}

std::vector<RgbImage> synthetic_dataset(std::size_t count, std::size_t size, std::uint64_t seed) {
  require(size >= 1 && size <= 4096, "synthetic_dataset: bad size");
  Rng rng(seed);
  std::vector<RgbImage> out;
  const double s = static_cast<double>(size);
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> img(size * size * 3);
    double base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
      base[c] = uniform(rng, 30, 220);
      gx[c] = uniform(rng, -80, 80);
      gy[c] = uniform(rng, -80, 80);
    }
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        for (int c = 0; c < 3; ++c)
          img[(y * size + x) * 3 + c] = base[c] + gx[c] * (x / s - 0.5) + gy[c] * (y / s - 0.5);
    const int shapes = 1 + static_cast<int>(rng() % 4);
    for (int r = 0; r < shapes; ++r) {
      const auto x0 = static_cast<std::size_t>(uniform(rng, 0, s * 0.8));
      const auto y0 = static_cast<std::size_t>(uniform(rng, 0, s * 0.8));
      const auto x1 = std::min(size, x0 + 2 + static_cast<std::size_t>(uniform(rng, 0, s * 0.5)));
      const auto y1 = std::min(size, y0 + 2 + static_cast<std::size_t>(uniform(rng, 0, s * 0.5)));
      const bool stripes = rng() % 3 == 0;
      const std::size_t period = 2 + rng() % 4;
      double col[3];
      for (double& v : col) v = uniform(rng, 0, 255);
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          if (stripes && (x / period) % 2) continue;
          for (int c = 0; c < 3; ++c) img[(y * size + x) * 3 + c] = col[c];
        }
    }
    RgbImage im(static_cast<std::uint32_t>(size), static_cast<std::uint32_t>(size));
    for (std::size_t i = 0; i < img.size(); ++i) {
      im.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img[i], 0.0, 255.0)));
    }
    out.push_back(std::move(im));
  }
  return out;
}

std::vector<RgbImage> load_dataset(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), "dataset directory " + dir.string() +
                                                  " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) {
      return static_cast<char>(std::tolower(c));
    });
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".png")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RgbImage> out;
  for (const auto& f : files) out.push_back(read_image(f));
  return out;
}

std::vector<Crop> crop_manifest(const std::vector<RgbImage>& images, std::size_t crop,
                                Rng& rng) {
  std::vector<Crop> m;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    require(im.width >= crop && im.height >= crop,
            "image " + std::to_string(i) + " (" + std::to_string(im.width) + "x" +
                std::to_string(im.height) + ") is smaller than the crop size " +
                std::to_string(crop));
    m.push_back({i, rng() % (im.height - crop + 1), rng() % (im.width - crop + 1)});
  }
  for (std::size_t i = m.size(); i > 1; --i) std::swap(m[i - 1], m[rng() % i]);
  return m;
}

Tensor<float> make_batch(const std::vector<RgbImage>& images, std::span<const Crop> crops,
                         std::size_t crop) {
  require(!crops.empty(), "make_batch: no crops");
  Tensor<float> out(Shape{crops.size(), 3, crop, crop});
  float* dst = out.data();
  for (const auto& c : crops) {
    const auto& im = images.at(c.image);
    require(c.y + crop <= im.height && c.x + crop <= im.width, "make_batch: crop out of bounds");
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < crop; ++y)
        for (std::size_t x = 0; x < crop; ++x)
          *dst++ = im.at(c.y + y, c.x + x, ch) / 255.0f;
  }
  return out;
}

TrainResult train(const std::vector<RgbImage>& data, const std::vector<RgbImage>& val,
                  const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  require(!data.empty(), "train: the training set is empty");
  Rng data_rng(cfg.seed);
  Rng noise_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  TrainResult result;
  result.model = init_model<float>(cfg.model, cfg.seed);
  auto& m = result.model;
  std::vector<Parameter<float>*> params;
  m.for_each_parameter([&](Parameter<float>& p) { params.push_back(&p); });

  std::vector<Crop> val_crops;
  for (std::size_t i = 0; i < val.size(); ++i) {
    require(val[i].width >= cfg.crop && val[i].height >= cfg.crop,
            "validation image " + std::to_string(i) + " is smaller than the crop size");
    val_crops.push_back({i, (val[i].height - cfg.crop) / 2, (val[i].width - cfg.crop) / 2});
  }
  const Tensor<float> val_batch =
      val.empty() ? Tensor<float>() : make_batch(val, val_crops, cfg.crop);

  PlateauScheduler sched(cfg.lr, cfg.warmup_epochs, cfg.patience, cfg.plateau_threshold,
                         cfg.lr_factor);
  AdamOptions opt;
  opt.lr = cfg.lr;
  std::ofstream trace;
  if (!cfg.trace_path.empty()) {
    trace.open(cfg.trace_path);
    require(static_cast<bool>(trace), "cannot write trace " + cfg.trace_path);
    write_trace_csv(trace, {});
  }

  auto manifest = crop_manifest(data, cfg.crop, data_rng);
  std::size_t pos = 0;
  for (long step = 1; step <= cfg.steps; ++step) {
    if (pos >= manifest.size()) {
      if (!val.empty()) {
        const auto v = rd_loss(val_batch, m, cfg.loss, entropy::QuantizeMode::round, nullptr);
        opt.lr = sched.step(v.parts.total);
        result.epochs.push_back({sched.epoch(), step - 1, v.parts.total, opt.lr});
      }
      manifest = crop_manifest(data, cfg.crop, data_rng);
      pos = 0;
    }
    const std::size_t take = std::min(cfg.batch, manifest.size() - pos);
    const auto batch = make_batch(data, std::span(manifest).subspan(pos, take), cfg.crop);
    pos += take;
    auto loss = rd_loss(batch, m, cfg.loss, entropy::QuantizeMode::noise, &noise_rng);
    backward(loss.total);
    adam_step<float>(params, opt);
    StepRecord rec{step, loss.parts, opt.lr};
    result.trace.push_back(rec);
    if (trace.is_open()) write_trace_csv(trace, {rec});
    if (on_step) on_step(rec);
    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        step % cfg.checkpoint_every == 0) {
      save_weights(m, cfg.checkpoint_path);
    }
  }
  if (!cfg.checkpoint_path.empty()) save_weights(m, cfg.checkpoint_path);
  return result;
}

DatasetSplit resolve_dataset(const TrainConfig& cfg) {
  std::vector<RgbImage> all;
  const std::string prefix = "synthetic:";
  if (cfg.dataset.rfind(prefix, 0) == 0) {
    const auto n = parse_number<std::size_t>("dataset", cfg.dataset.substr(prefix.size()));
    all = synthetic_dataset(n, cfg.crop, cfg.seed + 1);
  } else {
    all = load_dataset(cfg.dataset);
  }
  require(all.size() > cfg.val_images,
          "dataset has " + std::to_string(all.size()) + " images; need more than the " +
              std::to_string(cfg.val_images) + " held out for validation");
  DatasetSplit split;
  split.val.assign(all.end() - static_cast<long>(cfg.val_images), all.end());
  all.resize(all.size() - cfg.val_images);
  split.train = std::move(all);
  return split;
}

TrainResult train(const TrainConfig& cfg, const StepCallback& on_step) {
  const auto split = resolve_dataset(cfg);
  return train(split.train, split.val, cfg, on_step);
}

void write_trace_csv(std::ostream& out, const std::vector<StepRecord>& trace) {
  if (trace.empty()) {
    out << "step,rate_L,rate_H,dist_full,dist_base,total,lr\n";
    return;
  }
  for (const auto& r : trace) {
    out << r.step << ',' << fmt(r.parts.rate_low) << ',' << fmt(r.parts.rate_high) << ','
        << fmt(r.parts.dist_full) << ',' << fmt(r.parts.dist_base) << ','
        << fmt(r.parts.total) << ',' << fmt(r.lr) << '\n';
  }
  out.flush();
}

double Evaluation::base_fraction() const {
  const double total = bpp_base + bpp_enh;
  return total > 0 ? bpp_base / total : 0.0;
}

Evaluation evaluate(const FlicModel& m, const std::vector<RgbImage>& images) {
  require(!images.empty(), "evaluate: no images");
  const auto lm = LoadedModel::from(m.clone());
  Evaluation e;
  for (const auto& img : images) {
    const auto enc = encode_image(img, lm);
    const auto x = to_tensor(img);
    const auto full = to_tensor(decode_image(enc.container, DecodeMode::full(), lm));
    const auto base = to_tensor(decode_image(enc.container, DecodeMode::base(), lm));
    e.bpp_base += enc.stats.bpp_base;
    e.bpp_enh += enc.stats.bpp_enh;
    e.mse_full += mse(x, full);
    e.mse_base += mse(x, base);
    e.psnr_full += psnr(x, full);
    e.psnr_base += psnr(x, base);
  }
  const double n = static_cast<double>(images.size());
  for (double* v : {&e.bpp_base, &e.bpp_enh, &e.mse_full, &e.mse_base, &e.psnr_full,
                    &e.psnr_base}) {
    *v /= n;
  }
  return e;
}

std::vector<SweepCell> alpha_sweep(const std::vector<RgbImage>& data,
                                   const std::vector<RgbImage>& val, const TrainConfig& base,
                                   const std::vector<double>& lambdas,
                                   const std::vector<double>& alphas,
                                   const std::function<void(const SweepCell&)>& on_cell) {
  require(!val.empty(), "alpha_sweep: needs held-out images");
  std::vector<SweepCell> cells;
  for (double lambda : lambdas) {
    for (double alpha : alphas) {
      auto cfg = base;
      cfg.loss.lambda = lambda;
      cfg.loss.alpha = alpha;
      cfg.trace_path.clear();
      cfg.checkpoint_path.clear();
      const auto r = train(data, val, cfg);
      cells.push_back({lambda, alpha, evaluate(r.model, val)});
      if (on_cell) on_cell(cells.back());
    }
  }
  return cells;
}

void write_sweep_table(std::ostream& out, const std::vector<SweepCell>& cells) {
  char line[200];
  std::snprintf(line, sizeof line, "%10s %8s %9s %9s %10s %10s %9s\n", "lambda", "alpha",
                "bpp_base", "bpp_enh", "psnr_full", "psnr_base", "base_frac");
  out << line;
  for (const auto& c : cells) {
    std::snprintf(line, sizeof line, "%10.5g %8.4g %9.4f %9.4f %10.3f %10.3f %9.4f\n", c.lambda,
                  c.alpha, c.eval.bpp_base, c.eval.bpp_enh, c.eval.psnr_full, c.eval.psnr_base,
                  c.eval.base_fraction());
    out << line;
  }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "lambda,alpha,bpp_base,bpp_enh,bpp_total,psnr_full,psnr_base,mse_full,mse_base,"
         "base_fraction\n";
  for (const auto& c : cells) {
    const auto& e = c.eval;
    out << fmt(c.lambda) << ',' << fmt(c.alpha) << ',' << fmt(e.bpp_base) << ','
        << fmt(e.bpp_enh) << ',' << fmt(e.bpp_base + e.bpp_enh) << ',' << fmt(e.psnr_full)
        << ',' << fmt(e.psnr_base) << ',' << fmt(e.mse_full) << ',' << fmt(e.mse_base) << ','
        << fmt(e.base_fraction()) << '\n';
  }
}

#define FLIC_INSTANTIATE(T)                                                             \
  template Var<T> distortion<T>(const Var<T>&, const Var<T>&, Metric);                 \
  template Loss<T> rd_loss<T>(const Tensor<T>&, const FlicModelT<T>&, const LossConfig&, \
                              entropy::QuantizeMode, Rng*);

FLIC_INSTANTIATE(float)
FLIC_INSTANTIATE(double)

#undef FLIC_INSTANTIATE

}  // namespace flic::training

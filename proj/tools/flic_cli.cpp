// flic: command-line front end for the codec, inspection tools, metrics,
// training, and the session server.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "flic/codec.hpp"
#include "flic/errors.hpp"
#include "flic/inspect.hpp"
#include "flic/metrics.hpp"
#include "flic/service.hpp"
#include "flic/training.hpp"

using namespace flic;
using bitstream::ImageRect;

namespace {

struct ModelOpts {
  std::string path;
  std::uint64_t seed = 1;
};

LoadedModel load_model(const ModelOpts& o) {
  if (!o.path.empty()) return LoadedModel::load(o.path);
  if (const char* env = std::getenv("FLIC_MODEL"); env && *env) return LoadedModel::load(env);
  std::cerr << "note: no --model given, using untrained toy weights from seed " << o.seed << "\n";
  return LoadedModel::from(init_model<float>(FlicConfig::toy(), o.seed));
}

ImageRect parse_rect(const std::string& s) {
  std::array<std::uint32_t, 4> v{};
  std::stringstream in(s);
  std::string part;
  std::size_t n = 0;
  while (std::getline(in, part, ',')) {
    if (n == 4 || part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw std::invalid_argument("ROI must be x,y,w,h with non-negative integers: " + s);
    v[n++] = static_cast<std::uint32_t>(std::stoul(part));
  }
  if (n != 4) throw std::invalid_argument("ROI must be x,y,w,h: " + s);
  return {v[0], v[1], v[2], v[3]};
}

std::vector<ImageRect> parse_rects(const std::vector<std::string>& v) {
  std::vector<ImageRect> out;
  for (const auto& s : v) out.push_back(parse_rect(s));
  return out;
}

void print_kv(const std::vector<std::pair<std::string, double>>& kv, const std::string& report) {
  nlohmann::json j;
  std::cout << std::setprecision(10);
  for (const auto& [k, v] : kv) {
    std::cout << k << "=" << v << "\n";
    j[k] = v;
  }
  if (!report.empty()) {
    std::ofstream f(report);
    if (!f) throw std::runtime_error("cannot write " + report);
    f << j.dump(2) << "\n";
  }
}

std::vector<std::pair<std::string, double>> stats_kv(const EncodeStats& s) {
  return {{"bpp_base", s.bpp_base},
          {"bpp_enh", s.bpp_enh},
          {"bpp_total", s.bpp_total},
          {"bpp_container", s.bpp_container},
          {"base_bytes", double(s.base_bytes)},
          {"enh_bytes", double(s.enh_bytes)},
          {"container_bytes", double(s.container_bytes)}};
}

// rate,quality per line; a header line and '#' comments are skipped.
std::vector<RdPoint> read_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<RdPoint> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    RdPoint p;
    if (!(ls >> p.rate >> p.quality)) {
      if (out.empty()) continue;  // header
      throw std::invalid_argument(path + ": bad line '" + line + "'");
    }
    out.push_back(p);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(std::stod(part));
  return out;
}

training::TrainConfig load_train_config(const std::string& path) {
  return path.empty() ? training::TrainConfig{} : training::TrainConfig::load(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-aware learned image codec with scalable and ROI decoding"};
  app.require_subcommand(1);
  ModelOpts mo;
  app.add_option("--model", mo.path, "Weight file (default: $FLIC_MODEL, else untrained toy)");
  app.add_option("--seed", mo.seed, "Seed for untrained weights and training");
  std::string config_path;
  app.add_option("--config", config_path, "Training config (key = value)");

  std::string in, out, report;
  std::vector<std::string> rois;

  auto* init = app.add_subcommand("init-model", "Write freshly initialised weights");
  init->add_option("output", out)->required();
  std::string preset = "toy";
  init->add_option("--preset", preset)->check(CLI::IsMember({"toy", "large"}));

  auto* enc = app.add_subcommand("encode", "Image to two-layer container");
  enc->add_option("input", in)->required()->check(CLI::ExistingFile);
  enc->add_option("output", out)->required();
  bool base_only = false;
  enc->add_flag("--base-only", base_only, "Drop the enhancement layer");
  enc->add_option("--report", report, "Also write the stats as JSON");

  auto* dec = app.add_subcommand("decode", "Container to image (PNG or PPM by extension)");
  dec->add_option("input", in)->required()->check(CLI::ExistingFile);
  dec->add_option("output", out)->required();
  std::string mode = "full";
  dec->add_option("--mode", mode)->check(CLI::IsMember({"full", "base", "roi"}));
  dec->add_option("--roi", rois, "x,y,w,h (repeatable)");

  auto* ext = app.add_subcommand("extract-roi", "Keep only the enhancement tiles covering ROIs");
  ext->add_option("input", in)->required()->check(CLI::ExistingFile);
  ext->add_option("output", out)->required();
  ext->add_option("--roi", rois, "x,y,w,h (repeatable)")->required();

  auto* lat = app.add_subcommand("inspect-latents", "Write low/high latent mosaics");
  lat->add_option("input", in, "Container or image")->required()->check(CLI::ExistingFile);
  lat->add_option("prefix", out, "Writes <prefix>_low.png and <prefix>_high.png")->required();

  auto* spec = app.add_subcommand("spectrum", "Log-magnitude Fourier image of an image");
  spec->add_option("input", in)->required()->check(CLI::ExistingFile);
  spec->add_option("output", out)->required();

  auto* met = app.add_subcommand("metrics", "mse, psnr and ms_ssim between two images");
  std::string other;
  met->add_option("reference", in)->required()->check(CLI::ExistingFile);
  met->add_option("test", other)->required()->check(CLI::ExistingFile);
  met->add_option("--report", report, "Also write the values as JSON");

  auto* bd = app.add_subcommand("bd-rate", "BD-rate of curve B against curve A");
  bd->add_option("curve_a", in, "rate,quality lines")->required()->check(CLI::ExistingFile);
  bd->add_option("curve_b", other)->required()->check(CLI::ExistingFile);

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("output", out, "Final weights")->required();
  long steps = -1;
  tr->add_option("--steps", steps, "Overrides the config");
  std::string trace;
  tr->add_option("--trace", trace, "Loss trace CSV");

  auto* sweep = app.add_subcommand("rd-sweep", "Train one model per (lambda, alpha) and evaluate");
  std::string lambdas = "0.01", alphas = "0,0.1";
  sweep->add_option("--lambdas", lambdas, "Comma-separated");
  sweep->add_option("--alphas", alphas, "Comma-separated");
  sweep->add_option("--csv", out, "Plot-ready data file");
  sweep->add_option("--steps", steps, "Overrides the config");

  auto* serve = app.add_subcommand("serve", "Run the session server");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_sessions = 64;
  serve->add_option("--host", host)->envname("FLIC_HOST");
  serve->add_option("--port", port)->envname("FLIC_PORT");
  serve->add_option("--max-sessions", max_sessions);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*init) {
      const auto cfg = preset == "toy" ? FlicConfig::toy() : FlicConfig::large();
      const auto m = init_model<float>(cfg, mo.seed);
      save_weights(m, out);
      std::cout << "model_id=" << model_id_hex(LoadedModel::from(m).id) << "\n";
    } else if (*enc) {
      const auto lm = load_model(mo);
      auto r = encode_image(read_image(in), lm);
      if (base_only) {
        r.container.enhancement = std::monostate{};
        r.bytes = bitstream::serialize(r.container);
        r.stats = container_stats(r.container, r.bytes.size());
      }
      write_file(out, r.bytes);
      print_kv(stats_kv(r.stats), report);
    } else if (*dec) {
      const auto lm = load_model(mo);
      DecodeMode dm = mode == "full"   ? DecodeMode::full()
                      : mode == "base" ? DecodeMode::base()
                                       : DecodeMode::roi(parse_rects(rois));
      if (mode != "roi" && !rois.empty())
        throw std::invalid_argument("--roi only applies to --mode roi");
      write_image(out, decode_image(read_file(in), dm, lm));
    } else if (*ext) {
      const auto lm = load_model(mo);
      const auto c = bitstream::parse(read_file(in));
      if (c.header.model_id != lm.id) throw ModelMismatchError(c.header.model_id, lm.id);
      const auto rects = parse_rects(rois);
      const auto bytes = bitstream::serialize(bitstream::extract_roi(c, rects, lm.model));
      write_file(out, bytes);
      print_kv(stats_kv(container_stats(bitstream::parse(bytes), bytes.size())), "");
    } else if (*lat) {
      const auto lm = load_model(mo);
      auto bytes = read_file(in);
      bitstream::Container c;
      if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "FLIC")) {
        c = bitstream::parse(bytes);
      } else {
        c = encode_image(decode_image_data(bytes), lm).container;
      }
      const auto y = decode_latents(c, c.has_enhancement() && !c.is_tiled() ? DecodeMode::full()
                                                                            : DecodeMode::base(),
                                    lm);
      const LatentPair pair{entropy::from_symbols<float>(y.low), entropy::from_symbols<float>(y.high)};
      const auto mosaics = visualize_latents(pair);
      for (const auto& [name, m] : {std::pair{"low", &mosaics.low}, std::pair{"high", &mosaics.high}}) {
        if (!m->warning.empty()) std::cerr << name << ": " << m->warning << "\n";
        if (m->image.empty()) continue;
        Tensor<float> rgb(Shape{3, m->image.shape()[0], m->image.shape()[1]});
        for (std::size_t c3 = 0; c3 < 3; ++c3)
          std::copy(m->image.values().begin(), m->image.values().end(),
                    rgb.data() + c3 * m->image.size());
        write_image(out + "_" + name + ".png", to_image(rgb));
        std::cout << name << "_channels=" << m->shown << "\n";
      }
    } else if (*spec) {
      write_file(out, service::spectrum_png(spectrum(to_tensor(read_image(in)))));
    } else if (*met) {
      const auto a = to_tensor(read_image(in)), b = to_tensor(read_image(other));
      std::vector<std::pair<std::string, double>> kv{{"mse", mse(a, b)}, {"psnr", psnr(a, b)}};
      if (a.shape()[1] >= 16 && a.shape()[2] >= 16) kv.emplace_back("ms_ssim", ms_ssim(a, b));
      print_kv(kv, report);
    } else if (*bd) {
      std::cout << std::setprecision(10) << "bd_rate=" << bd_rate(read_curve(in), read_curve(other))
                << "\n";
    } else if (*tr) {
      auto cfg = load_train_config(config_path);
      if (app.count("--seed")) cfg.seed = mo.seed;
      if (steps >= 0) cfg.steps = steps;
      if (!trace.empty()) cfg.trace_path = trace;
      cfg.validate();
      const auto r = training::train(cfg, [&](const training::StepRecord& s) {
        if (s.step % 50 == 0)
          std::cerr << "step " << s.step << " loss " << s.parts.total << " lr " << s.lr << "\n";
      });
      save_weights(r.model, out);
      std::cout << "model_id=" << model_id_hex(LoadedModel::from(r.model).id) << "\n";
      std::cout << "final_loss=" << r.trace.back().parts.total << "\n";
    } else if (*sweep) {
      auto cfg = load_train_config(config_path);
      if (app.count("--seed")) cfg.seed = mo.seed;
      if (steps >= 0) cfg.steps = steps;
      cfg.validate();
      const auto split = training::resolve_dataset(cfg);
      const auto cells = training::alpha_sweep(
          split.train, split.val, cfg, parse_doubles(lambdas), parse_doubles(alphas),
          [](const training::SweepCell& c) {
            std::cerr << "lambda " << c.lambda << " alpha " << c.alpha << " done\n";
          });
      training::write_sweep_table(std::cout, cells);
      if (!out.empty()) {
        std::ofstream f(out);
        training::write_sweep_csv(f, cells);
      }
    } else if (*serve) {
      auto lm = std::make_shared<const LoadedModel>(load_model(mo));
      service::Service svc(lm, {.max_sessions = max_sessions});
      service::HttpServer http(svc, host, port);
      std::cout << "listening on http://" << host << ":" << http.port() << " model "
                << model_id_hex(lm->id) << std::endl;
      http.wait();
    }
  } catch (const ModelMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

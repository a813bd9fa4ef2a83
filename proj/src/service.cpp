#include "flic/service.hpp"

#include <httplib.h>

#include <cmath>
#include <json.hpp>
#include <random>

#include "flic/errors.hpp"
#include "flic/inspect.hpp"
#include "flic/metrics.hpp"

namespace flic::service {

using bitstream::ImageRect;
using bitstream::LatentRect;
using nlohmann::json;

struct Service::Session {
  std::mutex mutex;
  std::string id;
  bitstream::Container container;
  EncodeStats encoded;
  IntTensor high;
  std::optional<Tensor<float>> original;
  RgbImage base, full, current;
  double psnr_base = 0, psnr_full = 0;
  std::vector<bool> sent;  // latent cells already transmitted
  std::vector<bitstream::RoiTile> tiles;
  std::size_t sent_bytes = 0;
};

namespace {

std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double pixels(const bitstream::Header& h) { return double(h.width) * double(h.height); }

std::vector<ImageRect> to_image_rects(std::span<const LatentRect> rects, int stages,
                                      const bitstream::Header& h) {
  std::vector<ImageRect> out;
  for (const auto& r : rects) {
    const std::size_t x0 = std::size_t{r.x0} << stages, y0 = std::size_t{r.y0} << stages;
    const std::size_t x1 = std::min<std::size_t>(r.x1() << stages, h.width);
    const std::size_t y1 = std::min<std::size_t>(r.y1() << stages, h.height);
    out.push_back({static_cast<std::uint32_t>(x0), static_cast<std::uint32_t>(y0),
                   static_cast<std::uint32_t>(x1 - x0), static_cast<std::uint32_t>(y1 - y0)});
  }
  return out;
}

std::string data_url(const RgbImage& img) {
  const auto png = encode_png(img);
  return "data:image/png;base64," +
         httplib::detail::base64_encode(std::string(png.begin(), png.end()));
}

json rects_json(const std::vector<ImageRect>& rects) {
  json a = json::array();
  for (const auto& r : rects) a.push_back({r.x, r.y, r.w, r.h});
  return a;
}

json stats_json(const SessionStats& s) {
  json j = {{"id", s.id},
            {"width", s.width},
            {"height", s.height},
            {"bpp_base", s.bpp_base},
            {"bpp_enh_total", s.bpp_enh_total},
            {"bpp_enh_sent", s.bpp_enh_sent},
            {"enh_bytes_sent", s.enh_bytes_sent},
            {"tiles_sent", s.tiles_sent},
            {"tiling_overhead_bpp", s.tiling_overhead_bpp},
            {"cumulative_rois", rects_json(s.cumulative_rois)}};
  if (s.psnr_base) j["psnr_base"] = *s.psnr_base;
  if (s.psnr_current) j["psnr_current"] = *s.psnr_current;
  if (s.psnr_full) j["psnr_full"] = *s.psnr_full;
  return j;
}

std::uint32_t coord(const json& v) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0 ||
      v.get<std::int64_t>() > std::int64_t{UINT32_MAX})
    throw std::invalid_argument("ROI coordinates must be non-negative integers");
  return static_cast<std::uint32_t>(v.get<std::int64_t>());
}

// {"rois": [[x, y, w, h], ...]} or objects with x, y, w, h.
std::vector<ImageRect> parse_rois(const std::string& body) {
  const json j = json::parse(body);
  if (!j.is_object() || !j.contains("rois") || !j["rois"].is_array())
    throw std::invalid_argument("body must be an object with a \"rois\" array");
  std::vector<ImageRect> out;
  for (const auto& r : j["rois"]) {
    if (r.is_array() && r.size() == 4) {
      out.push_back({coord(r[0]), coord(r[1]), coord(r[2]), coord(r[3])});
    } else if (r.is_object() && r.contains("x") && r.contains("y") && r.contains("w") &&
               r.contains("h")) {
      out.push_back({coord(r["x"]), coord(r["y"]), coord(r["w"]), coord(r["h"])});
    } else {
      throw std::invalid_argument("each ROI is [x, y, w, h] or {x, y, w, h}");
    }
  }
  return out;
}

void send_json(httplib::Response& res, int status, const json& j) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& fn) {
  try {
    fn();
  } catch (const NotFound& e) {
    send_json(res, 404, {{"error", e.what()}});
  } catch (const FormatError& e) {
    send_json(res, 400, {{"error", e.what()}});
  } catch (const std::invalid_argument& e) {
    send_json(res, 400, {{"error", e.what()}});
  } catch (const json::exception& e) {
    send_json(res, 400, {{"error", std::string("bad JSON: ") + e.what()}});
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

std::size_t tile_overhead_bytes(std::size_t channels) { return 8 + 2 + 4 * channels + 4 + 4; }

SpectrumMode parse_spectrum_mode(const std::string& s) {
  if (s == "base") return SpectrumMode::base;
  if (s == "current") return SpectrumMode::current;
  if (s == "full") return SpectrumMode::full;
  throw std::invalid_argument("unknown spectrum mode '" + s + "' (base, current, full)");
}

Service::Service(std::shared_ptr<const LoadedModel> model, ServiceOptions opts)
    : model_(std::move(model)), opts_(opts), id_state_(std::random_device{}()) {
  if (!model_) throw std::invalid_argument("service needs a model");
  if (opts_.max_sessions == 0) throw std::invalid_argument("max_sessions must be positive");
  id_state_ = (id_state_ << 32) ^ std::random_device{}();
}

Service::~Service() = default;

std::string Service::fresh_id() {
  char buf[17];
  for (;;) {
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(splitmix64(id_state_)));
    if (!index_.count(buf)) return buf;
  }
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) {
  std::lock_guard lock(store_mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) throw NotFound(id);
  lru_.splice(lru_.begin(), lru_, it->second);
  return *it->second;
}

std::size_t Service::session_count() const {
  std::lock_guard lock(store_mutex_);
  return index_.size();
}

CreateResult Service::create(std::span<const std::uint8_t> image_bytes) {
  const auto img = decode_image_data(image_bytes);
  const auto& lm = *model_;
  auto enc = encode_image(img, lm);

  auto s = std::make_shared<Session>();
  s->container = std::move(enc.container);
  s->encoded = enc.stats;
  s->high = bitstream::decode_enhancement(s->container, lm.model.density_high);
  s->base = decode_image(s->container, DecodeMode::base(), lm);
  s->full = decode_image(s->container, DecodeMode::full(), lm);
  s->current = s->base;
  s->sent.assign(std::size_t{s->container.header.latent_h} * s->container.header.latent_w, false);
  if (opts_.keep_original) {
    s->original = to_tensor(img);
    s->psnr_base = psnr(*s->original, to_tensor(s->base));
    s->psnr_full = psnr(*s->original, to_tensor(s->full));
  }

  {
    std::lock_guard lock(store_mutex_);
    s->id = fresh_id();
    lru_.push_front(s);
    index_[s->id] = lru_.begin();
    while (lru_.size() > opts_.max_sessions) {
      index_.erase(lru_.back()->id);
      lru_.pop_back();
    }
  }
  std::lock_guard lock(s->mutex);
  CreateResult out;
  out.base = s->base;
  out.stats = snapshot(*s);
  return out;
}

SessionStats Service::snapshot(const Session& s) const {
  const auto& h = s.container.header;
  SessionStats st;
  st.id = s.id;
  st.width = h.width;
  st.height = h.height;
  st.bpp_base = s.encoded.bpp_base;
  st.bpp_enh_total = s.encoded.bpp_enh;
  st.enh_bytes_sent = s.sent_bytes;
  st.bpp_enh_sent = 8.0 * double(s.sent_bytes) / pixels(h);
  st.tiles_sent = s.tiles.size();
  st.tiling_overhead_bpp =
      8.0 * double(st.tiles_sent * tile_overhead_bytes(h.channels_high)) / pixels(h);
  st.cumulative_rois = to_image_rects(bitstream::mask_to_rects(s.sent, h.latent_h, h.latent_w),
                                      model_->model.config.stages, h);
  if (s.original) {
    st.psnr_base = s.psnr_base;
    st.psnr_full = s.psnr_full;
    st.psnr_current = psnr(*s.original, to_tensor(s.current));
  }
  return st;
}

SessionStats Service::stats(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return snapshot(*s);
}

EnhanceResult Service::enhance(const std::string& id, std::span<const ImageRect> rois) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  const auto& lm = *model_;
  const auto& h = s->container.header;
  if (rois.empty()) throw std::invalid_argument("no ROIs given");
  const auto rects = bitstream::normalize_rois(rois, h.width, h.height, lm.model.config.stages);

  std::vector<bool> fresh(s->sent.size(), false);
  bool any = false;
  for (const auto& r : rects)
    for (std::size_t i = r.y0; i < r.y1(); ++i)
      for (std::size_t j = r.x0; j < r.x1(); ++j) {
        const std::size_t k = i * h.latent_w + j;
        if (s->sent[k]) continue;
        fresh[k] = true;
        any = true;
      }

  EnhanceResult out;
  if (any) {
    const auto delta = bitstream::mask_to_rects(fresh, h.latent_h, h.latent_w);
    auto tiles = bitstream::encode_tiles(s->high, delta, lm.model.density_high);
    for (auto& t : tiles) {
      out.delta_bytes += 8 + entropy::chunk_wire_size(t.chunk);
      s->tiles.push_back(std::move(t));
    }
    for (std::size_t k = 0; k < fresh.size(); ++k) s->sent[k] = s->sent[k] || fresh[k];
    s->sent_bytes += out.delta_bytes;

    bitstream::Container tiled;
    tiled.header = h;
    tiled.base = s->container.base;
    tiled.enhancement = s->tiles;
    const auto cumulative = to_image_rects(
        bitstream::mask_to_rects(s->sent, h.latent_h, h.latent_w), lm.model.config.stages, h);
    s->current = decode_image(tiled, DecodeMode::roi(cumulative), lm);
  }
  out.bpp_enh_sent_delta = 8.0 * double(out.delta_bytes) / pixels(h);
  out.image = s->current;
  out.stats = snapshot(*s);
  return out;
}

RgbImage Service::image(const std::string& id, SpectrumMode which) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  switch (which) {
    case SpectrumMode::base:
      return s->base;
    case SpectrumMode::full:
      return s->full;
    case SpectrumMode::current:
      break;
  }
  return s->current;
}

Tensor<double> Service::spectrum(const std::string& id, SpectrumMode which) {
  return flic::spectrum(to_tensor(image(id, which)));
}

std::vector<std::uint8_t> spectrum_png(const Tensor<double>& s) {
  const auto& sh = s.shape();
  RgbImage img(static_cast<std::uint32_t>(sh[1]), static_cast<std::uint32_t>(sh[0]));
  for (std::size_t y = 0; y < sh[0]; ++y)
    for (std::size_t x = 0; x < sh[1]; ++x) {
      const double v = std::clamp(s[y * sh[1] + x], 0.0, 1.0);
      const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0));
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = g;
    }
  return encode_png(img);
}

void Service::mount(httplib::Server& srv) {
  srv.set_payload_max_length(std::size_t{64} << 20);
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  srv.Options(R"(/sessions.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto* p = reinterpret_cast<const std::uint8_t*>(req.body.data());
      const auto r = create({p, req.body.size()});
      json j = stats_json(r.stats);
      j["image"] = data_url(r.base);
      send_json(res, 200, j);
    });
  });

  srv.Post(R"(/sessions/([0-9a-zA-Z]+)/enhance)",
           [this](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               const std::string id = req.matches[1];
               find(id);  // 404 before 400 for a malformed body
               const auto rois = parse_rois(req.body);
               const auto r = enhance(id, rois);
               json j = stats_json(r.stats);
               j["image"] = data_url(r.image);
               j["bpp_enh_sent_delta"] = r.bpp_enh_sent_delta;
               j["delta_bytes"] = r.delta_bytes;
               send_json(res, 200, j);
             });
           });

  srv.Get(R"(/sessions/([0-9a-zA-Z]+))", [this](const httplib::Request& req,
                                                httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, stats_json(stats(req.matches[1]))); });
  });

  srv.Get(R"(/sessions/([0-9a-zA-Z]+)/spectrum)",
          [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
              const std::string id = req.matches[1];
              find(id);
              const auto mode = parse_spectrum_mode(
                  req.has_param("mode") ? req.get_param_value("mode") : std::string("current"));
              const auto png = spectrum_png(spectrum(id, mode));
              res.set_content(std::string(png.begin(), png.end()), "image/png");
            });
          });
}

HttpServer::HttpServer(Service& service, const std::string& host, int port)
    : srv_(std::make_unique<httplib::Server>()) {
  service.mount(*srv_);
  if (port == 0) {
    port_ = srv_->bind_to_any_port(host);
  } else {
    port_ = srv_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { srv_->listen_after_bind(); });
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void HttpServer::stop() {
  srv_->stop();
  wait();
}

}  // namespace flic::service

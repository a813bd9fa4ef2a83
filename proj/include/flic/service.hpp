#pragma once

// In-memory encode sessions with incremental ROI enhancement, and the HTTP
// front end that serves them.
//
// Endpoints (JSON bodies; images as PNG data URLs):
//   POST /sessions                      raw PNG/PPM body
//   POST /sessions/{id}/enhance         {"rois": [[x, y, w, h], ...]}
//   GET  /sessions/{id}                 stats
//   GET  /sessions/{id}/spectrum?mode=base|current|full   image/png

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "flic/codec.hpp"

namespace httplib {
class Server;
}

namespace flic::service {

class NotFound : public std::runtime_error {
 public:
  explicit NotFound(const std::string& id) : std::runtime_error("no session " + id) {}
};

struct ServiceOptions {
  std::size_t max_sessions = 64;
  /// Keep the uploaded image so stats can report PSNR.
  bool keep_original = true;
};

struct SessionStats {
  std::string id;
  std::uint32_t width = 0, height = 0;
  double bpp_base = 0;
  double bpp_enh_total = 0;
  /// Serialized tile bytes sent so far (tile rectangles and chunk headers
  /// included), over pixels.
  double bpp_enh_sent = 0;
  std::size_t enh_bytes_sent = 0;
  std::size_t tiles_sent = 0;
  /// What tiling adds over one full chunk for the tiles sent so far.
  double tiling_overhead_bpp = 0;
  /// Accumulated ROIs as disjoint, in-bounds pixel rectangles aligned to
  /// the latent grid.
  std::vector<bitstream::ImageRect> cumulative_rois;
  std::optional<double> psnr_base, psnr_current, psnr_full;
};

struct CreateResult {
  SessionStats stats;
  RgbImage base;
};

struct EnhanceResult {
  SessionStats stats;
  RgbImage image;
  std::size_t delta_bytes = 0;
  double bpp_enh_sent_delta = 0;
};

enum class SpectrumMode { base, current, full };

/// Throws std::invalid_argument for anything but base, current, full.
SpectrumMode parse_spectrum_mode(const std::string& s);

class Service {
 public:
  explicit Service(std::shared_ptr<const LoadedModel> model, ServiceOptions opts = {});
  ~Service();

  /// Throws FormatError for undecodable images and std::invalid_argument
  /// for images the model cannot code.
  CreateResult create(std::span<const std::uint8_t> image_bytes);

  /// Sends only the tiles not already sent. Throws NotFound, or
  /// std::invalid_argument for empty or out-of-bounds ROIs.
  EnhanceResult enhance(const std::string& id, std::span<const bitstream::ImageRect> rois);

  SessionStats stats(const std::string& id);
  RgbImage image(const std::string& id, SpectrumMode which);
  /// Normalized log-magnitude spectrum of one of the session's images.
  Tensor<double> spectrum(const std::string& id, SpectrumMode which);

  std::size_t session_count() const;
  const LoadedModel& model() const { return *model_; }

  /// Registers the endpoints on `srv`.
  void mount(httplib::Server& srv);

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id);
  // caller holds the session lock
  SessionStats snapshot(const Session& s) const;
  std::string fresh_id();

  std::shared_ptr<const LoadedModel> model_;
  ServiceOptions opts_;
  mutable std::mutex store_mutex_;
  // most recently used first
  std::list<std::shared_ptr<Session>> lru_;
  std::unordered_map<std::string, std::list<std::shared_ptr<Session>>::iterator> index_;
  std::uint64_t id_state_;
};

/// Bytes per tile beyond its share of the full-chunk payload: rectangle,
/// chunk header, and the flushed coder state.
std::size_t tile_overhead_bytes(std::size_t channels);

/// Spectrum rendered as a grayscale PNG.
std::vector<std::uint8_t> spectrum_png(const Tensor<double>& s);

/// A running HTTP server on a background thread.
class HttpServer {
 public:
  /// Port 0 binds an ephemeral port.
  HttpServer(Service& service, const std::string& host = "127.0.0.1", int port = 0);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  int port() const { return port_; }
  /// Blocks until stop() is called from another thread.
  void wait();
  void stop();

 private:
  std::unique_ptr<httplib::Server> srv_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace flic::service

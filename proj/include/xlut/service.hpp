#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "xlut/nn/checkpoint.hpp"
#include "xlut/objective.hpp"
#include "xlut/oracle_fit.hpp"
#include "xlut/synth.hpp"

namespace xlut::service {

using nlohmann::json;

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64: length not a multiple of 4");
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw FormatError("base64: invalid input");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

/// High byte of every sample.
inline std::vector<std::uint8_t> to_display8(const Image16& img) {
  std::vector<std::uint8_t> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<std::uint8_t>(img.pixels()[i] >> 8);
  return out;
}

/// Bilinear downsize so the longer edge is at most `max_edge`.
inline Image16 fit_to_edge(const Image16& img, int max_edge) {
  const int longest = std::max(img.width(), img.height());
  if (max_edge < 1) throw InvariantError("max_edge must be >= 1");
  if (longest <= max_edge) return img;
  const double f = static_cast<double>(max_edge) / longest;
  const int w = std::max(1, static_cast<int>(std::lround(img.width() * f)));
  const int h = std::max(1, static_cast<int>(std::lround(img.height() * f)));
  const Raster<double> r = resize_bilinear(img, w, h);
  Image16 out(w, h);
  for (std::size_t i = 0; i < r.size(); ++i) {
    out.pixels()[i] = static_cast<std::uint16_t>(std::clamp(std::round(r.pixels()[i]), 0.0, kMaxIntensityF));
  }
  return out;
}

/// One authored annotation. `seq` and `created_at` are assigned on save.
struct AnnotationRecord {
  std::string image_id;
  ControlGrid grid;
  std::string created_at;
  std::string note;
  int seq = 0;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

inline json to_json(const AnnotationRecord& r) {
  return {{"image_id", r.image_id}, {"grid_w", r.grid.grid_w}, {"grid_h", r.grid.grid_h},
          {"a", r.grid.a},          {"b", r.grid.b},           {"wc", r.grid.wc},
          {"ww", r.grid.ww},        {"created_at", r.created_at}, {"note", r.note},
          {"seq", r.seq}};
}

inline AnnotationRecord record_from_json(const json& j) {
  AnnotationRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.grid.grid_w = j.at("grid_w").get<int>();
  r.grid.grid_h = j.at("grid_h").get<int>();
  r.grid.a = j.at("a").get<std::vector<double>>();
  r.grid.b = j.at("b").get<std::vector<double>>();
  r.grid.wc = j.at("wc").get<std::vector<double>>();
  r.grid.ww = j.at("ww").get<std::vector<double>>();
  r.created_at = j.value("created_at", "");
  r.note = j.value("note", "");
  r.seq = j.value("seq", 0);
  return r;
}

struct Reply {
  int status = 200;
  json body;
};

struct Config {
  std::filesystem::path data_dir;
  std::size_t max_upload_bytes = 64u << 20;
  std::optional<std::filesystem::path> checkpoint;
};

/// Annotation and preview backend. Handlers are plain functions of the
/// request body so they can be exercised without a socket; mount() wires
/// them to an httplib server.
///
/// Layout under data_dir: images/<sha256>.pgm (content-addressed),
/// annotations/<image_id>/<seq>.json (append-only), exports/<image_id>-<seq>/.
class Service {
 public:
  explicit Service(Config cfg) : cfg_(std::move(cfg)) {
    std::filesystem::create_directories(cfg_.data_dir / "images");
    std::filesystem::create_directories(cfg_.data_dir / "annotations");
    std::filesystem::create_directories(cfg_.data_dir / "exports");
    if (cfg_.checkpoint) {
      model_ = std::make_shared<const nn::Model>(nn::model_from_checkpoint(nn::load_checkpoint(*cfg_.checkpoint)));
    }
  }

  bool has_model() const noexcept { return model_ != nullptr; }

  Reply upload(std::string_view body) {
    if (body.size() > cfg_.max_upload_bytes) {
      return error(413, "upload of " + std::to_string(body.size()) + " bytes exceeds the " +
                            std::to_string(cfg_.max_upload_bytes) + "-byte cap");
    }
    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(body.data()), body.size());
    Image16 img;
    try {
      img = decode_pgm(bytes);
    } catch (const Error& e) {
      return error(400, e.what());
    }
    const std::string id = sha256_hex(bytes);
    {
      std::lock_guard lock(images_mu_);
      const auto path = image_path(id);
      if (!std::filesystem::exists(path)) write_file_atomic(path, bytes);
      images_.emplace(id, std::make_shared<const Image16>(std::move(img)));
    }
    const auto cached = find_image(id);
    return {200, {{"image_id", id}, {"width", cached->width()}, {"height", cached->height()}}};
  }

  /// Body: {"grid": {grid_w, grid_h, a?, b?, wc?, ww?}?, "params": {a?, b?, wc?, ww?}?,
  /// "downscale": 8, "max_edge": 512}. Channels missing from the grid are
  /// filled from the scalar params, then from the identity.
  Reply preview(const std::string& id, std::string_view body) {
    const auto img = find_image(id);
    if (!img) return error(404, "unknown image '" + id + "'");
    json req;
    if (auto bad = parse_body(body, req)) return *bad;
    try {
      const int s = req.value("downscale", 8);
      const int max_edge = req.value("max_edge", 512);
      if (s < 1) throw InvariantError("downscale must be >= 1");
      const ControlGrid grid = grid_from_request(req);
      const ParamMaps maps = maps_from_control_grid(grid, map_extent(img->width(), s), map_extent(img->height(), s), s);
      const Image16 shown = fit_to_edge(apply_maps(*img, maps), max_edge);
      json summary = {{"grid_w", grid.grid_w}, {"grid_h", grid.grid_h}, {"downscale", s}};
      for (int c = 0; c < 4; ++c) {
        const auto& v = grid.channel(c);
        summary[kChannelNames[c]] = {{"min", *std::min_element(v.begin(), v.end())},
                                     {"max", *std::max_element(v.begin(), v.end())}};
      }
      return {200, {{"width", shown.width()}, {"height", shown.height()}, {"pixels", base64_encode(to_display8(shown))},
                    {"applied", summary}}};
    } catch (const json::exception& e) {
      return error(422, e.what());
    } catch (const Error& e) {
      return error(422, e.what());
    }
  }

  Reply save_annotation(std::string_view body) {
    json req;
    if (auto bad = parse_body(body, req)) return *bad;
    AnnotationRecord rec;
    try {
      rec = record_from_json(req);
      validate(rec.grid);
    } catch (const json::exception& e) {
      return error(422, e.what());
    } catch (const Error& e) {
      return error(422, e.what());
    }
    if (!find_image(rec.image_id)) return error(404, "unknown image '" + rec.image_id + "'");

    std::lock_guard lock(image_mutex(rec.image_id));
    const auto dir = cfg_.data_dir / "annotations" / rec.image_id;
    std::filesystem::create_directories(dir);
    rec.seq = static_cast<int>(list_records(rec.image_id).size()) + 1;
    if (rec.created_at.empty()) rec.created_at = utc_now();
    write_file_atomic(dir / record_name(rec.seq), to_json(rec).dump(2) + "\n");
    return {200, to_json(rec)};
  }

  /// {"image_id", "latest": record or null, "history": [records, oldest first]}.
  Reply get_annotations(const std::string& image_id) {
    if (!find_image(image_id)) return error(404, "unknown image '" + image_id + "'");
    std::lock_guard lock(image_mutex(image_id));
    json history = json::array();
    for (const auto& rec : list_records(image_id)) history.push_back(to_json(rec));
    json latest = history.empty() ? json(nullptr) : history.back();
    return {200, {{"image_id", image_id}, {"latest", latest}, {"history", history}}};
  }

  /// Materializes the latest annotation as a training sample directory.
  /// Body: {"downscale": 8}.
  Reply export_annotation(const std::string& image_id, std::string_view body) {
    const auto img = find_image(image_id);
    if (!img) return error(404, "unknown image '" + image_id + "'");
    json req = json::object();
    if (!body.empty()) {
      if (auto bad = parse_body(body, req)) return *bad;
    }
    std::lock_guard lock(image_mutex(image_id));
    const auto records = list_records(image_id);
    if (records.empty()) return error(404, "no annotation for image '" + image_id + "'");
    const AnnotationRecord& rec = records.back();
    try {
      const int s = req.value("downscale", 8);
      if (s < 1) throw InvariantError("downscale must be >= 1");
      ParamMaps maps = maps_from_control_grid(rec.grid, map_extent(img->width(), s), map_extent(img->height(), s), s);
      const Sample sample = make_sample_with_maps(std::stoull(image_id.substr(0, 16), nullptr, 16), *img, std::move(maps));
      const auto dir = cfg_.data_dir / "exports" / (image_id + "-" + std::to_string(rec.seq) + "-s" + std::to_string(s));
      write_sample(sample, dir);
      return {200, {{"image_id", image_id}, {"seq", rec.seq}, {"downscale", s}, {"path", dir.string()}}};
    } catch (const json::exception& e) {
      return error(422, e.what());
    } catch (const InvariantError& e) {
      return error(422, e.what());
    }
  }

  /// Full model pipeline. Body: {"max_edge": N} (optional; default no resize).
  Reply enhance(const std::string& id, std::string_view body = {}) {
    const auto img = find_image(id);
    if (!img) return error(404, "unknown image '" + id + "'");
    if (!model_) return error(409, "no model loaded (start the server with a checkpoint)");
    json req = json::object();
    if (!body.empty()) {
      if (auto bad = parse_body(body, req)) return *bad;
    }
    const int max_edge = req.value("max_edge", std::max(img->width(), img->height()));
    const Enhanced out = xlut::enhance(*model_, *img);
    const Image16 shown = fit_to_edge(out.image, max_edge);

    const ParamMaps& m = out.maps;
    json maps = {{"map_w", m.map_w()}, {"map_h", m.map_h()}, {"downscale", m.downscale}};
    json summary = json::object();
    json heatmaps = json::object();
    for (int c = 0; c < 4; ++c) {
      const Plane& p = m.channel(c);
      const auto [lo_it, hi_it] = std::minmax_element(p.pixels().begin(), p.pixels().end());
      const double lo = *lo_it, hi = *hi_it;
      double mean = 0.0;
      std::vector<std::uint8_t> heat(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        mean += p.pixels()[i];
        heat[i] = hi > lo ? static_cast<std::uint8_t>(std::lround(255.0 * (p.pixels()[i] - lo) / (hi - lo))) : 0;
      }
      mean /= static_cast<double>(p.size());
      const char* name = kChannelNames[c];
      maps[name] = std::vector<float>(p.pixels().begin(), p.pixels().end());
      summary[name] = {{"min", lo}, {"max", hi}, {"mean", mean}};
      heatmaps[name] = {{"width", p.width()}, {"height", p.height()}, {"min", lo}, {"max", hi},
                        {"pixels", base64_encode(heat)}};
    }
    return {200, {{"preview", {{"width", shown.width()}, {"height", shown.height()},
                               {"pixels", base64_encode(to_display8(shown))}}},
                  {"summary", summary}, {"heatmaps", heatmaps}, {"maps", maps}}};
  }

  void mount(httplib::Server& srv) {
    srv.set_payload_max_length(cfg_.max_upload_bytes + 1);
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    const std::string id = "([0-9a-f]{64})";
    srv.Post("/api/images", [this, send](const httplib::Request& q, httplib::Response& r) { send(r, upload(q.body)); });
    srv.Post("/api/images/" + id + "/preview", [this, send](const httplib::Request& q, httplib::Response& r) {
      send(r, preview(q.matches[1], q.body));
    });
    srv.Post("/api/images/" + id + "/enhance", [this, send](const httplib::Request& q, httplib::Response& r) {
      send(r, enhance(q.matches[1], q.body));
    });
    srv.Post("/api/annotations", [this, send](const httplib::Request& q, httplib::Response& r) {
      send(r, save_annotation(q.body));
    });
    srv.Get("/api/annotations/" + id, [this, send](const httplib::Request& q, httplib::Response& r) {
      send(r, get_annotations(q.matches[1]));
    });
    srv.Post("/api/annotations/" + id + "/export", [this, send](const httplib::Request& q, httplib::Response& r) {
      send(r, export_annotation(q.matches[1], q.body));
    });
    srv.set_exception_handler([send](const httplib::Request&, httplib::Response& r, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send(r, {500, {{"error", what}}});
    });
  }

 private:
  static Reply error(int status, const std::string& message) { return {status, {{"error", message}}}; }

  static std::optional<Reply> parse_body(std::string_view body, json& out) {
    try {
      out = json::parse(body);
    } catch (const json::exception& e) {
      return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!out.is_object()) return error(400, "request body must be a JSON object");
    return std::nullopt;
  }

  static ControlGrid grid_from_request(const json& req) {
    const json grid = req.value("grid", json::object());
    const json scalars = req.value("params", json::object());
    const int gw = grid.value("grid_w", 2), gh = grid.value("grid_h", 2);
    if (gw < 2 || gh < 2 || gw > 1024 || gh > 1024) throw InvariantError("control grid must be between 2x2 and 1024x1024");
    ControlGrid g = ControlGrid::uniform(gw, gh, RemapParams{});
    for (int c = 0; c < 4; ++c) {
      const char* name = kChannelNames[c];
      auto& dst = g.channel(c);
      if (grid.contains(name)) {
        dst = grid.at(name).get<std::vector<double>>();
      } else if (scalars.contains(name)) {
        std::fill(dst.begin(), dst.end(), scalars.at(name).get<double>());
      }
    }
    validate(g);
    return g;
  }

  static std::string record_name(int seq) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%08d.json", seq);
    return buf;
  }

  static std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::filesystem::path image_path(const std::string& id) const { return cfg_.data_dir / "images" / (id + ".pgm"); }

  std::shared_ptr<const Image16> find_image(const std::string& id) {
    if (id.size() != 64 || id.find_first_not_of("0123456789abcdef") != std::string::npos) return nullptr;
    std::lock_guard lock(images_mu_);
    if (auto it = images_.find(id); it != images_.end()) return it->second;
    const auto path = image_path(id);
    if (!std::filesystem::exists(path)) return nullptr;
    auto img = std::make_shared<const Image16>(read_pgm(path));
    images_.emplace(id, img);
    return img;
  }

  std::mutex& image_mutex(const std::string& id) {
    std::lock_guard lock(locks_mu_);
    auto& m = locks_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

  std::vector<AnnotationRecord> list_records(const std::string& image_id) const {
    std::vector<AnnotationRecord> out;
    const auto dir = cfg_.data_dir / "annotations" / image_id;
    if (!std::filesystem::is_directory(dir)) return out;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto bytes = read_file(f);
      out.push_back(record_from_json(json::parse(bytes.begin(), bytes.end())));
    }
    return out;
  }

  Config cfg_;
  std::shared_ptr<const nn::Model> model_;
  std::mutex images_mu_;
  std::map<std::string, std::shared_ptr<const Image16>> images_;
  std::mutex locks_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

}  // namespace xlut::service

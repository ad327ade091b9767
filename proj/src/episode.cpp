#include "bdc/episode.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "bdc/binio.hpp"

namespace bdc {

namespace fs = std::filesystem;
using nlohmann::json;

Image Episode::image_at(int t) const {
  return dequantize_image(images[static_cast<std::size_t>(t)], h, w, c);
}

std::vector<std::uint8_t> quantize_image(const Image& img) {
  std::vector<std::uint8_t> out(img.px.size());
  for (std::size_t i = 0; i < img.px.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, img.px[i]));
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

Image dequantize_image(const std::vector<std::uint8_t>& bytes, int h, int w,
                       int c) {
  Image img;
  img.h = h;
  img.w = w;
  img.c = c;
  img.px.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.px[i] = static_cast<double>(bytes[i]) / 255.0;
  return img;
}

void write_episode(const std::string& path, const Episode& ep) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_episode: cannot open " + path);
  binio::write_bytes(os, "PPEP", 4);
  binio::write_u32(os, 1);  // version
  binio::write_string(os, ep.task);
  binio::write_u64(os, ep.seed);
  binio::write_u32(os, static_cast<std::uint32_t>(ep.length()));
  binio::write_u32(os, static_cast<std::uint32_t>(ep.h));
  binio::write_u32(os, static_cast<std::uint32_t>(ep.w));
  binio::write_u32(os, static_cast<std::uint32_t>(ep.c));
  binio::write_u32(os, static_cast<std::uint32_t>(ep.proprio_dim));
  binio::write_u32(os, static_cast<std::uint32_t>(ep.action_dim));
  for (int t = 0; t < ep.length(); ++t) {
    const auto& img = ep.images[static_cast<std::size_t>(t)];
    binio::write_bytes(os, img.data(), img.size());
    for (double v : ep.proprio[static_cast<std::size_t>(t)])
      binio::write_f64(os, v);
    for (double v : ep.actions[static_cast<std::size_t>(t)])
      binio::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("write_episode: write failed " + path);
}

Episode read_episode(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_episode: cannot open " + path);
  binio::expect_magic(is, "PPEP", "read_episode");
  const std::uint32_t version = binio::read_u32(is);
  if (version != 1) throw std::runtime_error("read_episode: unknown version");
  Episode ep;
  ep.task = binio::read_string(is);
  ep.seed = binio::read_u64(is);
  const std::uint32_t len = binio::read_u32(is);
  ep.h = static_cast<int>(binio::read_u32(is));
  ep.w = static_cast<int>(binio::read_u32(is));
  ep.c = static_cast<int>(binio::read_u32(is));
  ep.proprio_dim = static_cast<int>(binio::read_u32(is));
  ep.action_dim = static_cast<int>(binio::read_u32(is));
  const std::size_t img_bytes =
      static_cast<std::size_t>(ep.h) * ep.w * ep.c;
  for (std::uint32_t t = 0; t < len; ++t) {
    std::vector<std::uint8_t> img(img_bytes);
    binio::read_bytes(is, img.data(), img.size());
    ep.images.push_back(std::move(img));
    std::vector<double> p(static_cast<std::size_t>(ep.proprio_dim));
    for (auto& v : p) v = binio::read_f64(is);
    ep.proprio.push_back(std::move(p));
    std::vector<double> a(static_cast<std::size_t>(ep.action_dim));
    for (auto& v : a) v = binio::read_f64(is);
    ep.actions.push_back(std::move(a));
  }
  return ep;
}

void write_manifest(const std::string& dir, const DatasetManifest& m) {
  json j;
  j["task"] = m.task;
  j["image"] = {m.h, m.w, m.c};
  j["proprio_dim"] = m.proprio_dim;
  j["action_dim"] = m.action_dim;
  j["episode_len"] = m.episode_len;
  j["attempts"] = m.attempts;
  j["successes"] = m.successes;
  json eps = json::array();
  for (const auto& e : m.episodes)
    eps.push_back({{"file", e.file}, {"seed", e.seed}, {"success", e.success}});
  j["episodes"] = eps;
  std::ofstream os(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("write_manifest: cannot open " + dir);
  os << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is)
    throw std::runtime_error("read_manifest: no manifest.json in " + dir);
  json j;
  is >> j;
  DatasetManifest m;
  m.task = j.at("task").get<std::string>();
  m.h = j.at("image")[0].get<int>();
  m.w = j.at("image")[1].get<int>();
  m.c = j.at("image")[2].get<int>();
  m.proprio_dim = j.at("proprio_dim").get<int>();
  m.action_dim = j.at("action_dim").get<int>();
  m.episode_len = j.at("episode_len").get<int>();
  m.attempts = j.at("attempts").get<int>();
  m.successes = j.at("successes").get<int>();
  for (const auto& e : j.at("episodes")) {
    ManifestEntry me;
    me.file = e.at("file").get<std::string>();
    me.seed = e.at("seed").get<std::uint64_t>();
    me.success = e.at("success").get<bool>();
    m.episodes.push_back(me);
  }
  return m;
}

std::vector<Episode> load_dataset(const std::string& dir) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<Episode> eps;
  eps.reserve(m.episodes.size());
  for (const auto& e : m.episodes)
    eps.push_back(read_episode((fs::path(dir) / e.file).string()));
  return eps;
}

std::vector<Image> sample_future_frames(const Episode& ep, int t,
                                        const FrameSamplePlan& plan) {
  if (t < 0 || t >= ep.length())
    throw std::runtime_error("sample_future_frames: t beyond episode");
  std::vector<Image> frames;
  frames.reserve(plan.timestamps.size());
  for (int s : plan.timestamps) {
    const int at = std::min(t + s, ep.length() - 1);
    frames.push_back(ep.image_at(at));
  }
  return frames;
}

}  // namespace bdc

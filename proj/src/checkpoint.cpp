#include "bdc/checkpoint.hpp"

#include <fstream>

#include "bdc/binio.hpp"

namespace bdc {

namespace {

void write_normalizer(std::ostream& os, const Normalizer& n) {
  binio::write_u32(os, n.fitted ? 1 : 0);
  binio::write_u32(os, static_cast<std::uint32_t>(n.lo.size()));
  for (double v : n.lo) binio::write_f64(os, v);
  for (double v : n.hi) binio::write_f64(os, v);
}

Normalizer read_normalizer(std::istream& is) {
  Normalizer n;
  n.fitted = binio::read_u32(is) != 0;
  const std::uint32_t d = binio::read_u32(is);
  n.lo.resize(d);
  n.hi.resize(d);
  for (auto& v : n.lo) v = binio::read_f64(is);
  for (auto& v : n.hi) v = binio::read_f64(is);
  return n;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  binio::write_bytes(os, "BDC1", 4);
  binio::write_u32(os, 1);  // version
  binio::write_string(os, data.config.serialize());
  write_normalizer(os, data.action_norm);
  write_normalizer(os, data.latent_norm);
  binio::write_u32(os, data.tokenizer.has_value() ? 1 : 0);
  if (data.tokenizer) {
    const LatentTokenizer& t = *data.tokenizer;
    binio::write_string(os, to_string(t.variant));
    binio::write_u32(os, static_cast<std::uint32_t>(t.spatial_factor));
    binio::write_u32(os, static_cast<std::uint32_t>(t.patch_size));
    binio::write_u32(os, static_cast<std::uint32_t>(t.channels));
    binio::write_u32(os, static_cast<std::uint32_t>(t.latent_dim));
    binio::write_u32(os, t.trained ? 1 : 0);
    binio::write_u32(os, static_cast<std::uint32_t>(t.mean.size()));
    for (double v : t.mean) binio::write_f64(os, v);
    binio::write_u32(os, static_cast<std::uint32_t>(t.basis.size()));
    for (double v : t.basis) binio::write_f64(os, v);
    binio::write_f64(os, t.recon_error);
  }
  binio::write_u32(os, static_cast<std::uint32_t>(data.params.size()));
  for (const auto& p : data.params) {
    binio::write_string(os, p.name);
    binio::write_u32(os, static_cast<std::uint32_t>(p.shape.size()));
    for (int d : p.shape) binio::write_u32(os, static_cast<std::uint32_t>(d));
    for (float v : p.data) binio::write_f32(os, v);
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  binio::expect_magic(is, "BDC1", "load_checkpoint");
  const std::uint32_t version = binio::read_u32(is);
  if (version != 1)
    throw std::runtime_error("load_checkpoint: unknown version");
  CheckpointData data;
  data.config = ModelConfig::deserialize(binio::read_string(is));
  data.action_norm = read_normalizer(is);
  data.latent_norm = read_normalizer(is);
  if (binio::read_u32(is) != 0) {
    LatentTokenizer t;
    t.variant = parse_tokenizer(binio::read_string(is));
    t.spatial_factor = static_cast<int>(binio::read_u32(is));
    t.patch_size = static_cast<int>(binio::read_u32(is));
    t.channels = static_cast<int>(binio::read_u32(is));
    t.latent_dim = static_cast<int>(binio::read_u32(is));
    t.trained = binio::read_u32(is) != 0;
    t.mean.resize(binio::read_u32(is));
    for (auto& v : t.mean) v = binio::read_f64(is);
    t.basis.resize(binio::read_u32(is));
    for (auto& v : t.basis) v = binio::read_f64(is);
    t.recon_error = binio::read_f64(is);
    data.tokenizer = std::move(t);
  }
  const std::uint32_t count = binio::read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamBlob p;
    p.name = binio::read_string(is);
    const std::uint32_t nd = binio::read_u32(is);
    std::size_t numel = 1;
    for (std::uint32_t j = 0; j < nd; ++j) {
      p.shape.push_back(static_cast<int>(binio::read_u32(is)));
      numel *= static_cast<std::size_t>(p.shape.back());
    }
    p.data.resize(numel);
    for (auto& v : p.data) v = binio::read_f32(is);
    data.params.push_back(std::move(p));
  }
  return data;
}

}  // namespace bdc

#include "bdc/model.hpp"

#include <sstream>
#include <stdexcept>

namespace bdc {

void ModelConfig::validate() const {
  if (width < 2 || width % heads != 0)
    throw std::runtime_error("model config: width must be divisible by heads");
  if (width % 2 != 0)
    throw std::runtime_error("model config: width must be even");
  if (chunk < 1) throw std::runtime_error("model config: chunk must be >= 1");
  if (action_dim < 1)
    throw std::runtime_error("model config: action_dim must be >= 1");
  if (frame_count < 0)
    throw std::runtime_error("model config: frame_count must be >= 0");
  if (frame_count > 0) {
    if (tokens_per_frame < 1 || latent_dim < 1)
      throw std::runtime_error(
          "model config: frame tokens need tokens_per_frame and latent_dim");
    if (static_cast<int>(frame_timestamps.size()) != frame_count)
      throw std::runtime_error(
          "model config: frame_timestamps must have frame_count entries");
    for (int ts : frame_timestamps)
      if (ts < 1 || ts > chunk)
        throw std::runtime_error("model config: frame timestamp outside [1, N]");
  }
  if (image_h % 8 != 0 || image_w % 8 != 0)
    throw std::runtime_error("model config: image dims must be divisible by 8");
  if (encoder_layers < 1 || decoder_layers < 1)
    throw std::runtime_error("model config: need at least one layer each");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "width=" << width << "\n";
  os << "encoder_layers=" << encoder_layers << "\n";
  os << "decoder_layers=" << decoder_layers << "\n";
  os << "heads=" << heads << "\n";
  os << "chunk=" << chunk << "\n";
  os << "action_dim=" << action_dim << "\n";
  os << "frame_count=" << frame_count << "\n";
  os << "tokens_per_frame=" << tokens_per_frame << "\n";
  os << "latent_dim=" << latent_dim << "\n";
  os << "frame_timestamps=";
  for (std::size_t i = 0; i < frame_timestamps.size(); ++i)
    os << (i ? "," : "") << frame_timestamps[i];
  os << "\n";
  os << "attention_mode=" << to_string(attention_mode) << "\n";
  os << "granularity=" << to_string(granularity) << "\n";
  os << "image_h=" << image_h << "\n";
  os << "image_w=" << image_w << "\n";
  os << "image_c=" << image_c << "\n";
  os << "proprio_dim=" << proprio_dim << "\n";
  os << "diffusion_steps=" << diffusion_steps << "\n";
  os << "ff_mult=" << ff_mult << "\n";
  os << "cnn_c1=" << cnn_c1 << "\n";
  os << "cnn_c2=" << cnn_c2 << "\n";
  os << "cnn_c3=" << cnn_c3 << "\n";
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("model config: bad line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "width") cfg.width = std::stoi(val);
    else if (key == "encoder_layers") cfg.encoder_layers = std::stoi(val);
    else if (key == "decoder_layers") cfg.decoder_layers = std::stoi(val);
    else if (key == "heads") cfg.heads = std::stoi(val);
    else if (key == "chunk") cfg.chunk = std::stoi(val);
    else if (key == "action_dim") cfg.action_dim = std::stoi(val);
    else if (key == "frame_count") cfg.frame_count = std::stoi(val);
    else if (key == "tokens_per_frame") cfg.tokens_per_frame = std::stoi(val);
    else if (key == "latent_dim") cfg.latent_dim = std::stoi(val);
    else if (key == "frame_timestamps") {
      cfg.frame_timestamps.clear();
      std::istringstream vs(val);
      std::string tok;
      while (std::getline(vs, tok, ','))
        if (!tok.empty()) cfg.frame_timestamps.push_back(std::stoi(tok));
    } else if (key == "attention_mode") cfg.attention_mode = parse_attention_mode(val);
    else if (key == "granularity") cfg.granularity = parse_granularity(val);
    else if (key == "image_h") cfg.image_h = std::stoi(val);
    else if (key == "image_w") cfg.image_w = std::stoi(val);
    else if (key == "image_c") cfg.image_c = std::stoi(val);
    else if (key == "proprio_dim") cfg.proprio_dim = std::stoi(val);
    else if (key == "diffusion_steps") cfg.diffusion_steps = std::stoi(val);
    else if (key == "ff_mult") cfg.ff_mult = std::stoi(val);
    else if (key == "cnn_c1") cfg.cnn_c1 = std::stoi(val);
    else if (key == "cnn_c2") cfg.cnn_c2 = std::stoi(val);
    else if (key == "cnn_c3") cfg.cnn_c3 = std::stoi(val);
    else throw std::runtime_error("model config: unknown key: " + key);
  }
  return cfg;
}

}  // namespace bdc

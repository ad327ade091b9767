#include "bdc/attention_mask.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace bdc {

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "full") return AttentionMode::full;
  if (s == "decoupled") return AttentionMode::decoupled;
  if (s == "unidirectional") return AttentionMode::unidirectional;
  throw std::runtime_error("unknown attention mode: " + s);
}

std::string to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::full: return "full";
    case AttentionMode::decoupled: return "decoupled";
    case AttentionMode::unidirectional: return "unidirectional";
  }
  return "?";
}

MaskGranularity parse_granularity(const std::string& s) {
  if (s == "per_frame") return MaskGranularity::per_frame;
  if (s == "block") return MaskGranularity::block;
  throw std::runtime_error("unknown mask granularity: " + s);
}

std::string to_string(MaskGranularity g) {
  return g == MaskGranularity::per_frame ? "per_frame" : "block";
}

namespace {

void validate(const AttentionMaskSpec& spec) {
  if (spec.n_actions < 1)
    throw std::runtime_error("attention mask: need at least one action token");
  int prev = 0;
  for (const auto& g : spec.frame_groups) {
    if (g.timestamp < 1 || g.timestamp > spec.n_actions)
      throw std::runtime_error("attention mask: frame timestamp outside [1, N]");
    if (g.timestamp < prev)
      throw std::runtime_error("attention mask: frame timestamps must be nondecreasing");
    if (g.tokens < 1)
      throw std::runtime_error("attention mask: frame group with no tokens");
    prev = g.timestamp;
  }
}

}  // namespace

MaskMatrix build_attention_mask(const AttentionMaskSpec& spec) {
  validate(spec);
  const int m = spec.frame_tokens();
  const int n = spec.n_actions;
  const int t = m + n;
  MaskMatrix mask;
  mask.rows = t;
  mask.cols = t;
  mask.cells.assign(static_cast<std::size_t>(t) * t, 0);

  if (spec.mode == AttentionMode::full) {
    std::fill(mask.cells.begin(), mask.cells.end(), 1);
    return mask;
  }

  // Action rows: own modality only, in every non-full mode. Under
  // unidirectional/per_frame with frames present, intra-action attention is
  // causal as well; otherwise a frame that sees action i < s_j at layer two
  // would pick up later actions mixed into token i at layer one.
  const bool causal_actions = spec.mode == AttentionMode::unidirectional &&
                              spec.granularity == MaskGranularity::per_frame &&
                              !spec.frame_groups.empty();
  for (int q = m; q < t; ++q)
    for (int c = m; c < t; ++c)
      mask.set(q, c, !causal_actions || c <= q);

  // Frame rows.
  int min_ts = n + 1;
  for (const auto& g : spec.frame_groups) min_ts = std::min(min_ts, g.timestamp);

  int q0 = 0;
  for (const auto& g : spec.frame_groups) {
    for (int q = q0; q < q0 + g.tokens; ++q) {
      if (spec.mode == AttentionMode::decoupled) {
        for (int c = 0; c < m; ++c) mask.set(q, c, true);
        continue;
      }
      // unidirectional
      if (spec.granularity == MaskGranularity::block) {
        for (int c = 0; c < m; ++c) mask.set(q, c, true);
        for (int i = 0; i < std::min(min_ts, n); ++i) mask.set(q, m + i, true);
      } else {
        // Frame-to-frame visibility is causal in timestamps so that
        // group-j outputs cannot pick up later actions through another
        // frame at a deeper layer.
        int c0 = 0;
        for (const auto& h : spec.frame_groups) {
          if (h.timestamp <= g.timestamp)
            for (int c = c0; c < c0 + h.tokens; ++c) mask.set(q, c, true);
          c0 += h.tokens;
        }
        for (int i = 0; i < std::min(g.timestamp, n); ++i)
          mask.set(q, m + i, true);
      }
    }
    q0 += g.tokens;
  }

  // Every token sees itself by construction; check anyway.
  for (int q = 0; q < t; ++q) {
    bool any = false;
    for (int c = 0; c < t; ++c) any = any || mask.at(q, c);
    if (!any)
      throw std::runtime_error("attention mask: query row with no visible keys");
  }
  return mask;
}

std::string render_mask(const AttentionMaskSpec& spec) {
  const MaskMatrix mask = build_attention_mask(spec);
  const int m = spec.frame_tokens();
  const int t = mask.rows;

  std::vector<std::string> labels;
  int fi = 0;
  for (const auto& g : spec.frame_groups) {
    for (int p = 0; p < g.tokens; ++p) {
      std::ostringstream os;
      os << "F" << fi << "@" << g.timestamp;
      if (g.tokens > 1) os << "." << p;
      labels.push_back(os.str());
    }
    ++fi;
  }
  int min_ts = spec.n_actions + 1;
  for (const auto& g : spec.frame_groups) min_ts = std::min(min_ts, g.timestamp);
  for (int i = 0; i < spec.n_actions; ++i) {
    std::ostringstream os;
    os << "A" << i;
    if (spec.mode == AttentionMode::unidirectional && !spec.frame_groups.empty())
      os << (i < min_ts ? "<" : ">");  // prior / post action marker
    labels.push_back(os.str());
  }

  std::size_t wlab = 0;
  for (const auto& l : labels) wlab = std::max(wlab, l.size());

  std::ostringstream out;
  out << to_string(spec.mode) << " / " << to_string(spec.granularity) << ", "
      << m << " frame tokens + " << spec.n_actions << " action tokens\n";
  out << std::string(wlab + 1, ' ');
  for (int c = 0; c < t; ++c) {
    std::string l = labels[static_cast<std::size_t>(c)];
    out << ' ' << l;
  }
  out << '\n';
  for (int q = 0; q < t; ++q) {
    const std::string& l = labels[static_cast<std::size_t>(q)];
    out << l << std::string(wlab + 1 - l.size(), ' ');
    for (int c = 0; c < t; ++c) {
      const std::size_t pad = labels[static_cast<std::size_t>(c)].size();
      out << ' ' << std::string(pad / 2, ' ')
          << (mask.at(q, c) ? "■" : "·")
          << std::string(pad - pad / 2 - 1, ' ');
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace bdc

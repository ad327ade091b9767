#pragma once

#include <string>
#include <vector>

#include "bdc/tensor.hpp"

namespace bdc {

enum class AttentionMode { full, decoupled, unidirectional };
enum class MaskGranularity { per_frame, block };

AttentionMode parse_attention_mode(const std::string& s);
std::string to_string(AttentionMode m);
MaskGranularity parse_granularity(const std::string& s);
std::string to_string(MaskGranularity g);

// One predicted frame: its chunk timestamp (1-based, in [1, N]) and how many
// decoder tokens it occupies.
struct FrameGroup {
  int timestamp = 1;
  int tokens = 1;
};

// Decoder self-attention layout. Token order is [all frame tokens grouped by
// frame, then all action tokens]; action token i sits at chunk position i
// (0-based), so a frame with timestamp s sees actions i < s.
struct AttentionMaskSpec {
  AttentionMode mode = AttentionMode::unidirectional;
  int n_actions = 0;
  std::vector<FrameGroup> frame_groups;
  MaskGranularity granularity = MaskGranularity::per_frame;

  int frame_tokens() const {
    int m = 0;
    for (const auto& g : frame_groups) m += g.tokens;
    return m;
  }
  int total_tokens() const { return frame_tokens() + n_actions; }
};

// Builds the boolean query x key matrix for the decoder's self-attention.
//
//   full           - every token attends every token.
//   decoupled      - frame tokens attend only frame tokens, action tokens
//                    only action tokens.
//   unidirectional - action tokens attend only action tokens; frame tokens
//                    attend frame tokens and the action tokens before them.
//                    Under block granularity every frame sees actions before
//                    the earliest frame timestamp and all frame tokens see
//                    each other. Under per_frame granularity the structure is
//                    strictly causal: frame group j sees actions i < s_j and
//                    frame groups with timestamps <= s_j, and action token i
//                    sees actions <= i, which keeps group-j outputs
//                    independent of later actions through any number of
//                    decoder layers.
MaskMatrix build_attention_mask(const AttentionMaskSpec& spec);

// Text rendering for the inspect-mask command: filled square = attend,
// middle dot = blocked, with group headers.
std::string render_mask(const AttentionMaskSpec& spec);

}  // namespace bdc

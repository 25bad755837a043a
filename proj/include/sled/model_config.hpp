#pragma once

#include <array>
#include <cstddef>

namespace sled {

/// Dimensions of the editing model. The text vocabulary reserves index 0
/// for the pad token.
struct ModelConfig {
    std::size_t d = 64;        // embedding width
    std::size_t blocks = 4;    // joint transformer blocks
    std::size_t heads = 4;
    std::size_t text_len = 24; // fixed padded text length T
    std::size_t vocab = 16;
    std::array<std::size_t, 3> grid = {8, 8, 3}; // H, W, C

    std::size_t ffn_hidden() const { return 2 * d; }
    std::size_t head_dim() const { return d / heads; }
    std::size_t n_img() const { return grid[0] * grid[1]; }
    std::size_t channels() const { return grid[2]; }
    /// Joint sequence: noisy latents, conditioning latents, text.
    std::size_t seq_len() const { return 2 * n_img() + text_len; }

    void validate() const;
};

} // namespace sled

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sled/prompt.hpp"
#include "sled/rng.hpp"
#include "sled/tensor.hpp"

namespace sled {

enum class EffectKind { channel_shift, region_scale, gradient_tilt, pattern_blend };

const char* effect_kind_name(EffectKind k);

/// One instruction atom: a token-id span in the vocabulary, an additive
/// effect pattern on latent grids, and the matching analytic probe.
struct EditAtom {
    std::size_t index = 0;
    std::vector<int> token_ids;    // n_tok consecutive vocabulary ids
    EffectKind kind = EffectKind::channel_shift;
    std::size_t channel = 0;
    Tensor pattern;                // [H x W x C], orthogonal to all other atoms
    double pattern_norm_sq = 0.0;
    double amplitude = 0.0;        // grid delta per unit strength is amplitude*pattern
};

struct WorldSpec {
    std::size_t atoms = 4;
    std::size_t tokens_per_atom = 3;
    std::array<std::size_t, 3> grid = {8, 8, 3}; // H, W, C
    double background_sigma = 0.3;
    std::uint64_t seed = 1;
};

/// A training example: clean grid, prompt over K distinct atoms, and the
/// grid with every prompt effect applied at strength 1.
struct Example {
    Tensor x_orig;                    // [H x W x C]
    Prompt prompt;
    std::vector<std::size_t> atom_indices;
    Tensor x_edit;                    // [H x W x C]
};

/// Procedural edit world. Atom effects are additive patterns chosen
/// mutually orthogonal, and clean backgrounds are projected orthogonal to
/// every pattern, so attribute probes recover effect strengths exactly.
class EditWorld {
public:
    static EditWorld generate(const WorldSpec& spec);

    const WorldSpec& spec() const { return spec_; }
    std::size_t atom_count() const { return atoms_.size(); }
    const EditAtom& atom(std::size_t i) const;

    /// Vocabulary: pad, M atom spans, then one neutral (no-op) atom span.
    int pad_id() const { return 0; }
    std::size_t vocab_size() const;
    const std::vector<int>& neutral_token_ids() const { return neutral_ids_; }

    Prompt make_prompt(const std::vector<std::size_t>& atom_indices) const;
    Prompt neutral_prompt() const;

    /// Smooth low-frequency field, projected so every atom probe reads 0.
    Tensor sample_background(Rng& rng) const;

    Tensor apply_effect(const Tensor& grid, std::size_t atom_index, double strength) const;
    double attribute_score(const Tensor& grid, std::size_t atom_index) const;

    /// Remove every atom pattern component from a grid (what is left is
    /// background as far as the probes are concerned).
    Tensor background_residual(const Tensor& grid) const;

    Example sample_example(std::size_t k, std::uint64_t seed) const;
    Example sample_example(std::size_t k, Rng& rng) const;

private:
    WorldSpec spec_;
    std::vector<EditAtom> atoms_;
    std::vector<int> neutral_ids_;

    Tensor smooth_field(Rng& rng) const;
    void validate_grid(const Tensor& grid, const char* what) const;
};

/// Binary archive of X_orig/X_edit grids plus a JSON manifest
/// (`<path>.json`) holding the world spec, seed, and per-example atoms.
void save_dataset(const std::string& path, const EditWorld& world,
                  const std::vector<Example>& examples);
std::vector<Example> load_dataset(const std::string& path, const EditWorld& world);

} // namespace sled

#include "sled/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fstream>

#include <json.hpp>

#include "sled/archive.hpp"
#include "sled/error.hpp"

namespace sled {

namespace {

constexpr std::size_t kEffectKinds = 4;
constexpr std::size_t kAmplitudeProbeSamples = 32;
constexpr double kAmplitudeFloor = 0.25;
constexpr double kAmplitudeSigmaFactor = 3.0;

std::size_t grid_index(const std::array<std::size_t, 3>& g, std::size_t x,
                       std::size_t y, std::size_t c) {
    return (y * g[1] + x) * g[2] + c;
}

// One orthogonal basis pattern per (kind, channel). All four kinds are
// mutually orthogonal on grids whose sides are multiples of 4; different
// channels are trivially orthogonal.
Tensor make_pattern(EffectKind kind, std::size_t channel,
                    const std::array<std::size_t, 3>& g) {
    const std::size_t h = g[0], w = g[1];
    Tensor p({h, w, g[2]});
    switch (kind) {
        case EffectKind::channel_shift:
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    p[grid_index(g, x, y, channel)] = 1.0;
            break;
        case EffectKind::region_scale: {
            // centered box covering a quarter of the area, zero mean
            const std::size_t y0 = h / 4, y1 = 3 * h / 4;
            const std::size_t x0 = w / 4, x1 = 3 * w / 4;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const bool inside = y >= y0 && y < y1 && x >= x0 && x < x1;
                    p[grid_index(g, x, y, channel)] = inside ? 0.75 : -0.25;
                }
            break;
        }
        case EffectKind::gradient_tilt: {
            const double mid = (static_cast<double>(w) - 1.0) / 2.0;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    p[grid_index(g, x, y, channel)] =
                        (static_cast<double>(x) - mid) / (static_cast<double>(w) / 2.0);
            break;
        }
        case EffectKind::pattern_blend:
            // 2x2-block checkerboard; zero mean and orthogonal to the
            // other kinds on grids whose sides are multiples of 4
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    p[grid_index(g, x, y, channel)] =
                        ((x / 2 + y / 2) % 2 == 0) ? 1.0 : -1.0;
            break;
    }
    return p;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

const char* effect_kind_name(EffectKind k) {
    switch (k) {
        case EffectKind::channel_shift: return "channel-shift";
        case EffectKind::region_scale: return "region-scale";
        case EffectKind::gradient_tilt: return "gradient-tilt";
        case EffectKind::pattern_blend: return "pattern-blend";
    }
    return "?";
}

EditWorld EditWorld::generate(const WorldSpec& spec) {
    const auto [h, w, c] = spec.grid;
    if (h == 0 || w == 0 || c == 0) throw ShapeError("world: empty grid");
    if (h % 4 != 0 || w % 4 != 0)
        throw ShapeError("world: grid sides must be multiples of 4");
    if (spec.tokens_per_atom == 0) throw ShapeError("world: tokens_per_atom must be >= 1");
    const std::size_t capacity = kEffectKinds * c;
    if (spec.atoms == 0 || spec.atoms > capacity)
        throw ShapeError("world: atom count " + std::to_string(spec.atoms) +
                         " exceeds disjoint capacity " + std::to_string(capacity));

    EditWorld world;
    world.spec_ = spec;

    for (std::size_t a = 0; a < spec.atoms; ++a) {
        EditAtom atom;
        atom.index = a;
        atom.kind = static_cast<EffectKind>(a % kEffectKinds);
        atom.channel = (a / kEffectKinds + a % kEffectKinds) % c;
        atom.pattern = make_pattern(atom.kind, atom.channel, spec.grid);
        atom.pattern_norm_sq = dot(atom.pattern, atom.pattern);
        atom.token_ids.resize(spec.tokens_per_atom);
        for (std::size_t j = 0; j < spec.tokens_per_atom; ++j)
            atom.token_ids[j] = static_cast<int>(1 + a * spec.tokens_per_atom + j);
        world.atoms_.push_back(std::move(atom));
    }

    // disjointness is by construction; verify anyway
    for (std::size_t a = 0; a < world.atoms_.size(); ++a)
        for (std::size_t b = a + 1; b < world.atoms_.size(); ++b)
            if (std::abs(dot(world.atoms_[a].pattern, world.atoms_[b].pattern)) > 1e-9)
                throw NumericError("world: atom patterns not orthogonal");

    // strength 1 sits at ~3 sigma of the raw background's probed statistic
    Rng amp_rng(mix_seed(spec.seed, 0xA117));
    std::vector<Tensor> fields;
    fields.reserve(kAmplitudeProbeSamples);
    for (std::size_t i = 0; i < kAmplitudeProbeSamples; ++i)
        fields.push_back(world.smooth_field(amp_rng));
    for (EditAtom& atom : world.atoms_) {
        double mean = 0.0, sq = 0.0;
        for (const Tensor& f : fields) {
            const double v = dot(f, atom.pattern) / atom.pattern_norm_sq;
            mean += v;
            sq += v * v;
        }
        mean /= static_cast<double>(fields.size());
        const double var = sq / static_cast<double>(fields.size()) - mean * mean;
        atom.amplitude =
            std::max(kAmplitudeSigmaFactor * std::sqrt(std::max(var, 0.0)),
                     kAmplitudeFloor);
    }

    world.neutral_ids_.resize(spec.tokens_per_atom);
    for (std::size_t j = 0; j < spec.tokens_per_atom; ++j)
        world.neutral_ids_[j] =
            static_cast<int>(1 + spec.atoms * spec.tokens_per_atom + j);
    return world;
}

const EditAtom& EditWorld::atom(std::size_t i) const {
    if (i >= atoms_.size())
        throw ShapeError("world: atom index " + std::to_string(i) + " out of range");
    return atoms_[i];
}

std::size_t EditWorld::vocab_size() const {
    return 1 + (spec_.atoms + 1) * spec_.tokens_per_atom;
}

Prompt EditWorld::make_prompt(const std::vector<std::size_t>& atom_indices) const {
    Prompt p;
    for (std::size_t i : atom_indices) p.instructions.push_back(atom(i).token_ids);
    return p;
}

Prompt EditWorld::neutral_prompt() const {
    Prompt p;
    p.instructions.push_back(neutral_ids_);
    return p;
}

Tensor EditWorld::smooth_field(Rng& rng) const {
    const auto [h, w, c] = spec_.grid;
    Tensor field({h, w, c});
    std::vector<double> plane(h * w), tmp(h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (double& v : plane) v = rng.normal();
        // two binomial blur passes per axis -> low-frequency field
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const std::size_t xm = x == 0 ? 0 : x - 1;
                    const std::size_t xp = x + 1 == w ? x : x + 1;
                    tmp[y * w + x] = 0.25 * plane[y * w + xm] + 0.5 * plane[y * w + x] +
                                     0.25 * plane[y * w + xp];
                }
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const std::size_t ym = y == 0 ? 0 : y - 1;
                    const std::size_t yp = y + 1 == h ? y : y + 1;
                    plane[y * w + x] = 0.25 * tmp[ym * w + x] + 0.5 * tmp[y * w + x] +
                                       0.25 * tmp[yp * w + x];
                }
        }
        double mean = 0.0, sq = 0.0;
        for (double v : plane) {
            mean += v;
            sq += v * v;
        }
        mean /= static_cast<double>(plane.size());
        double std_dev =
            std::sqrt(std::max(sq / static_cast<double>(plane.size()) - mean * mean, 1e-12));
        const double scale = spec_.background_sigma / std_dev;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                field[grid_index(spec_.grid, x, y, ch)] = (plane[y * w + x] - mean) * scale;
    }
    return field;
}

Tensor EditWorld::sample_background(Rng& rng) const {
    return background_residual(smooth_field(rng));
}

void EditWorld::validate_grid(const Tensor& grid, const char* what) const {
    const auto& g = spec_.grid;
    if (grid.shape() != std::vector<std::size_t>{g[0], g[1], g[2]})
        throw ShapeError(std::string(what) + ": grid shape " + grid.shape_str() +
                         " does not match world");
}

Tensor EditWorld::apply_effect(const Tensor& grid, std::size_t atom_index,
                               double strength) const {
    validate_grid(grid, "apply_effect");
    if (!std::isfinite(strength)) throw NumericError("apply_effect: non-finite strength");
    const EditAtom& a = atom(atom_index);
    Tensor out = grid;
    const double s = strength * a.amplitude;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * a.pattern[i];
    return out;
}

double EditWorld::attribute_score(const Tensor& grid, std::size_t atom_index) const {
    validate_grid(grid, "attribute_score");
    grid.require_finite("attribute_score input");
    const EditAtom& a = atom(atom_index);
    return dot(grid, a.pattern) / (a.pattern_norm_sq * a.amplitude);
}

Tensor EditWorld::background_residual(const Tensor& grid) const {
    validate_grid(grid, "background_residual");
    Tensor out = grid;
    for (const EditAtom& a : atoms_) {
        const double coeff = dot(out, a.pattern) / a.pattern_norm_sq;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= coeff * a.pattern[i];
    }
    return out;
}

Example EditWorld::sample_example(std::size_t k, std::uint64_t seed) const {
    Rng rng(seed);
    return sample_example(k, rng);
}

Example EditWorld::sample_example(std::size_t k, Rng& rng) const {
    if (k > atoms_.size())
        throw ShapeError("sample_example: k=" + std::to_string(k) + " exceeds atom count");
    Example ex;
    ex.x_orig = sample_background(rng);
    std::vector<std::size_t> pool(atoms_.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_int(pool.size() - i);
        std::swap(pool[i], pool[j]);
        ex.atom_indices.push_back(pool[i]);
    }
    ex.prompt = make_prompt(ex.atom_indices);
    ex.x_edit = ex.x_orig;
    for (std::size_t a : ex.atom_indices) ex.x_edit = apply_effect(ex.x_edit, a, 1.0);
    return ex;
}

void save_dataset(const std::string& path, const EditWorld& world,
                  const std::vector<Example>& examples) {
    NamedTensors entries;
    nlohmann::json manifest;
    const WorldSpec& spec = world.spec();
    manifest["world"] = {{"atoms", spec.atoms},
                         {"tokens_per_atom", spec.tokens_per_atom},
                         {"grid", spec.grid},
                         {"background_sigma", spec.background_sigma},
                         {"seed", spec.seed}};
    manifest["count"] = examples.size();
    nlohmann::json atoms = nlohmann::json::array();
    for (std::size_t i = 0; i < examples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "ex%05zu", i);
        entries.emplace_back(std::string(name) + ".x_orig", examples[i].x_orig);
        entries.emplace_back(std::string(name) + ".x_edit", examples[i].x_edit);
        atoms.push_back(examples[i].atom_indices);
    }
    manifest["atoms"] = atoms;
    save_archive(path, entries);
    std::ofstream out(path + ".json");
    if (!out) throw ArchiveError("cannot write manifest " + path + ".json");
    out << manifest.dump(2) << "\n";
}

std::vector<Example> load_dataset(const std::string& path, const EditWorld& world) {
    std::ifstream in(path + ".json");
    if (!in) throw ArchiveError("cannot read manifest " + path + ".json");
    nlohmann::json manifest = nlohmann::json::parse(in);
    if (manifest["world"]["atoms"] != world.spec().atoms ||
        manifest["world"]["tokens_per_atom"] != world.spec().tokens_per_atom)
        throw ArchiveError("dataset manifest does not match world spec");
    const NamedTensors entries = load_archive(path);
    ArchiveIndex index(entries);
    std::vector<Example> out;
    const std::size_t count = manifest["count"];
    for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "ex%05zu", i);
        Example ex;
        ex.x_orig = index.get(std::string(name) + ".x_orig");
        ex.x_edit = index.get(std::string(name) + ".x_edit");
        ex.atom_indices = manifest["atoms"][i].get<std::vector<std::size_t>>();
        ex.prompt = world.make_prompt(ex.atom_indices);
        out.push_back(std::move(ex));
    }
    return out;
}

} // namespace sled

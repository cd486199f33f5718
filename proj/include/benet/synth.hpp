#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "benet/png_io.hpp"
#include "benet/rng.hpp"
#include "benet/tensor.hpp"

namespace benet::synth {

// Four tampering families standing in for distinct manipulation methods.
// Each leaves a different residual statistic inside its mask.
enum class Family { splice, warp, colorshift, texture };

std::string family_name(Family f);
Family family_from_name(const std::string& name);  // throws ConfigError
const std::vector<Family>& all_families();

enum class Split { train, val, test };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct SyntheticSpec {
    int image_size = 32;
    int n_train = 400;  // per class per family
    int n_val = 100;
    int n_test = 100;
    std::vector<Family> families = {Family::splice, Family::warp, Family::colorshift,
                                    Family::texture};
    uint64_t seed = 1;
    double tamper_area_lo = 0.05;  // fraction of image area
    double tamper_area_hi = 0.25;

    int count_for(Split s) const;
    void validate() const;  // throws ConfigError
};

struct Sample {
    Tensor image;        // (3,S,S) doubles in [0,1], on the 1/255 grid
    int label = 0;       // 0 real, 1 fake
    std::string family;  // "none" for real samples
    int index = 0;
    std::vector<uint8_t> mask;  // S*S, 0/255; empty for real samples
};

// Every sample is a pure function of (spec.seed, split, family, index);
// regenerating yields identical bytes.
Sample gen_real(const SyntheticSpec& spec, Split split, int index);
Sample gen_fake(const SyntheticSpec& spec, Family family, Split split, int index);

// The untampered base a fake was built from. Shared by all families at the
// same (split, index), which is what makes cross-family residual tests
// meaningful.
png_io::Image8 tamper_base(const SyntheticSpec& spec, Split split, int index);

// Closed-form expectation of the pixel population mean of the real class:
// the radial and texture fields are zero-mean by construction, so only the
// channel anchors remain.
double analytic_real_mean();

struct Dataset {
    SyntheticSpec spec;
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;

    const std::vector<Sample>& split(Split s) const;
};

Dataset generate_dataset(const SyntheticSpec& spec);  // in memory

// Layout: <root>/<split>/images/<family-or-real>_<index>.png,
// <root>/<split>/masks/... (fakes only), <root>/<split>/labels.csv,
// spec echoed to <root>/spec.json.
void write_dataset(const SyntheticSpec& spec, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);  // throws DataError

// Training-time augmentation: probability 1/2 horizontal flip, probability
// 1/2 erase a rectangle of 2-10% of the area to a constant.
Tensor augment(const Tensor& image, Rng& rng);
Tensor hflip(const Tensor& image);

Tensor image_to_tensor(const png_io::Image8& img);
png_io::Image8 tensor_to_image(const Tensor& t);

}  // namespace benet::synth

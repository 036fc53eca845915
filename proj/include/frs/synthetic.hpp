#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "frs/common.hpp"

namespace frs {

// Four-class toy task over 3x64x64 images. The class index encodes two cues
// at different scales: bit 1 picks the stripe orientation (0 horizontal,
// 1 vertical; period 16 px, levels 0.2 / 0.7), bit 0 adds a 4x4 patch of 1.0
// at a seeded uniform position. Gaussian noise (sigma 0.1) is added per
// pixel and channel, then values are clipped to [0, 1]. Telling all four
// classes apart needs both the coarse stripe cue and the fine marker cue.
struct SyntheticSpec {
    int num_classes = 4;
    int channels = 3;
    int height = 64;
    int width = 64;
    uint64_t seed = 0;
};

struct Dataset {
    Shape image_shape;                        // (channels, height, width)
    std::vector<std::vector<float>> images;  // row-major, one per sample
    std::vector<int> labels;

    int size() const { return static_cast<int>(labels.size()); }
};

// Samples are assigned classes round-robin (sample i gets class i mod 4), so
// counts stay balanced to within one. Everything is drawn from one seeded
// stream; the same spec and n reproduce the dataset bit for bit.
Dataset generate_synthetic_in_memory(const SyntheticSpec& spec, int n);

// Writes sample_%05d.frsr container files (single tensor "image") plus a
// labels.csv with a filename,label header line.
void generate_synthetic(const SyntheticSpec& spec, int n, const std::string& out_dir);

Dataset load_dataset(const std::string& dir);

}  // namespace frs

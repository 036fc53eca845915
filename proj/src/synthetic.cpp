#include "frs/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "frs/checkpoint.hpp"

namespace frs {

namespace {

constexpr float kStripeLow = 0.2f;
constexpr float kStripeHigh = 0.7f;  // amplitude 0.5 over the low level
constexpr int kStripePeriod = 16;
constexpr int kMarkerSize = 4;
constexpr double kNoiseSigma = 0.1;

void render_sample(std::vector<float>& img, const SyntheticSpec& spec, int label,
                   std::mt19937_64& rng) {
    const int c = spec.channels, h = spec.height, w = spec.width;
    const bool vertical = (label >> 1) & 1;
    const bool marker = label & 1;
    const int half = kStripePeriod / 2;

    img.resize(static_cast<size_t>(c) * h * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int band = (vertical ? x : y) / half;
            const float v = (band % 2 == 0) ? kStripeHigh : kStripeLow;
            for (int ch = 0; ch < c; ++ch)
                img[(static_cast<size_t>(ch) * h + y) * w + x] = v;
        }
    }
    if (marker) {
        std::uniform_int_distribution<int> pos_y(0, h - kMarkerSize);
        std::uniform_int_distribution<int> pos_x(0, w - kMarkerSize);
        const int my = pos_y(rng);
        const int mx = pos_x(rng);
        for (int ch = 0; ch < c; ++ch)
            for (int y = my; y < my + kMarkerSize; ++y)
                for (int x = mx; x < mx + kMarkerSize; ++x)
                    img[(static_cast<size_t>(ch) * h + y) * w + x] = 1.0f;
    }
    std::normal_distribution<double> noise(0.0, kNoiseSigma);
    for (auto& v : img) v = std::clamp(v + static_cast<float>(noise(rng)), 0.0f, 1.0f);
}

std::string sample_filename(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05d.frsr", index);
    return buf;
}

}  // namespace

Dataset generate_synthetic_in_memory(const SyntheticSpec& spec, int n) {
    if (spec.num_classes < 1 || spec.num_classes > 4)
        throw ConfigError("synthetic task supports 1..4 classes");
    if (spec.channels < 1 || spec.height < kStripePeriod || spec.width < kStripePeriod)
        throw ConfigError("synthetic image extents too small for the stripe pattern");
    if (n < spec.num_classes)
        throw ContractError("need at least one sample per class: n=" + std::to_string(n) +
                            " < " + std::to_string(spec.num_classes));
    std::mt19937_64 rng(spec.seed);
    Dataset ds;
    ds.image_shape = {spec.channels, spec.height, spec.width};
    ds.images.resize(static_cast<size_t>(n));
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        ds.labels[static_cast<size_t>(i)] = i % spec.num_classes;
        render_sample(ds.images[static_cast<size_t>(i)], spec, ds.labels[static_cast<size_t>(i)],
                      rng);
    }
    return ds;
}

void generate_synthetic(const SyntheticSpec& spec, int n, const std::string& out_dir) {
    Dataset ds = generate_synthetic_in_memory(spec, n);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());

    std::ostringstream labels;
    labels << "filename,label\n";
    for (int i = 0; i < n; ++i) {
        const std::string fname = sample_filename(i);
        TensorBlob blob;
        blob.name = "image";
        blob.shape = ds.image_shape;
        blob.data = ds.images[static_cast<size_t>(i)];
        write_container((std::filesystem::path(out_dir) / fname).string(), {blob});
        labels << fname << "," << ds.labels[static_cast<size_t>(i)] << "\n";
    }
    const std::string labels_path = (std::filesystem::path(out_dir) / "labels.csv").string();
    std::ofstream out(labels_path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + labels_path + "' for writing");
    out << labels.str();
    if (!out) throw IoError("write failed for '" + labels_path + "'");
}

Dataset load_dataset(const std::string& dir) {
    const std::string labels_path = (std::filesystem::path(dir) / "labels.csv").string();
    std::ifstream in(labels_path);
    if (!in) throw IoError("cannot open '" + labels_path + "'");
    std::string line;
    if (!std::getline(in, line) || line != "filename,label")
        throw CorruptionError("'" + labels_path + "' does not start with a filename,label header");

    Dataset ds;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t comma = line.rfind(',');
        if (comma == std::string::npos || comma == 0 || comma + 1 >= line.size())
            throw CorruptionError("malformed labels.csv line: '" + line + "'");
        const std::string fname = line.substr(0, comma);
        int label = 0;
        try {
            label = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw CorruptionError("malformed label in line: '" + line + "'");
        }
        std::vector<TensorBlob> blobs =
            read_container((std::filesystem::path(dir) / fname).string());
        if (blobs.size() != 1 || blobs[0].name != "image")
            throw CorruptionError("sample file '" + fname +
                                  "' must hold exactly one tensor named 'image'");
        if (ds.images.empty()) {
            ds.image_shape = blobs[0].shape;
        } else if (blobs[0].shape != ds.image_shape) {
            throw CorruptionError("sample file '" + fname + "' has shape " +
                                  shape_str(blobs[0].shape) + ", expected " +
                                  shape_str(ds.image_shape));
        }
        ds.images.push_back(std::move(blobs[0].data));
        ds.labels.push_back(label);
    }
    if (ds.labels.empty()) throw ContractError("dataset at '" + dir + "' is empty");
    return ds;
}

}  // namespace frs

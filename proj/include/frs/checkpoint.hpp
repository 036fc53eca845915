#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "frs/backbone.hpp"

namespace frs {

// One tensor inside a container file. Payloads are 32-bit floats regardless
// of the in-memory precision the model runs at.
struct TensorBlob {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

// Container layout (all integers little-endian):
//   "FRSR" | u32 version = 1 | u32 tensor_count
//   per tensor: u16 name_len | name bytes | u8 dtype (0 = f32) | u8 ndim
//               | u32 dim... | f32 row-major payload
//   u32 CRC32 over every preceding byte
void write_container(const std::string& path, const std::vector<TensorBlob>& tensors);
std::vector<TensorBlob> read_container(const std::string& path);

template <typename T>
void save_checkpoint(const Model<T>& m, const std::string& path) {
    std::vector<TensorBlob> blobs;
    detail::visit_parameters(const_cast<Model<T>&>(m),
                             [&](const std::string& name, Tensor<T>& t) {
                                 TensorBlob b;
                                 b.name = name;
                                 b.shape = t.shape();
                                 b.data.assign(t.data(), t.data() + t.numel());
                                 blobs.push_back(std::move(b));
                             });
    write_container(path, blobs);
}

// Restores every registered parameter from the container. The file must
// cover the registry exactly: extra names, missing names, or shape changes
// are compatibility errors.
template <typename T>
void load_checkpoint(Model<T>& m, const std::string& path) {
    std::vector<TensorBlob> blobs = read_container(path);
    std::vector<bool> used(blobs.size(), false);
    detail::visit_parameters(m, [&](const std::string& name, Tensor<T>& t) {
        const TensorBlob* found = nullptr;
        for (size_t i = 0; i < blobs.size(); ++i) {
            if (blobs[i].name == name) {
                found = &blobs[i];
                used[i] = true;
                break;
            }
        }
        if (!found)
            throw CompatibilityError("checkpoint '" + path + "' is missing tensor '" + name +
                                     "'");
        if (found->shape != t.shape())
            throw CompatibilityError("checkpoint tensor '" + name + "' has shape " +
                                     shape_str(found->shape) + ", model expects " +
                                     shape_str(t.shape()));
        for (int64_t i = 0; i < t.numel(); ++i)
            t.data()[i] = static_cast<T>(found->data[static_cast<size_t>(i)]);
    });
    for (size_t i = 0; i < blobs.size(); ++i)
        if (!used[i])
            throw CompatibilityError("checkpoint tensor '" + blobs[i].name +
                                     "' has no matching model parameter");
}

}  // namespace frs

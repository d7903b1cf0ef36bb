#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "vmsst/model/model.hpp"

namespace vmsst::model {

// Checkpoint container:
//   "VMSST1" | u64 manifest length | manifest JSON | u32 tensor count |
//   per tensor: u32 name length, name, u32 rank, u64 dims[rank], f32 data |
//   u64 FNV-1a checksum of every preceding byte.
// All integers and floats are little-endian.
inline constexpr std::string_view archive_magic = "VMSST1";

struct ArchiveTensor {
    std::string name;
    num::Shape shape;
    std::vector<float> values;
};

struct Archive {
    nlohmann::json manifest = nlohmann::json::object();
    std::vector<ArchiveTensor> tensors;

    const ArchiveTensor* find(const std::string& name) const;
};

std::string encode_archive(const Archive& archive);
// Validates the whole buffer before returning; throws FormatError.
Archive decode_archive(std::string_view bytes);

void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

// Appends every parameter as `prefix + name`.
template <typename Real>
void export_parameters(const ParameterSet<Real>& params, Archive& archive, const std::string& prefix = "");

// Copies `prefix + name` tensors into params. Every parameter must be present
// with a matching shape; nothing is modified when validation fails.
template <typename Real>
void import_parameters(ParameterSet<Real>& params, const Archive& archive, const std::string& prefix = "");

void save_model(const Model<float>& model, const std::filesystem::path& path, nlohmann::json extra = {});
Model<float> load_model(const std::filesystem::path& path);

}  // namespace vmsst::model

#include "vmsst/model/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vmsst::model {

namespace {

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

template <typename UInt>
void put(std::string& out, UInt value) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename UInt>
    UInt get() {
        need(sizeof(UInt));
        UInt value = 0;
        for (std::size_t i = 0; i < sizeof(UInt); ++i) {
            value |= static_cast<UInt>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(UInt);
        return value;
    }

    std::string_view take(std::size_t count) {
        need(count);
        auto view = bytes_.substr(pos_, count);
        pos_ += count;
        return view;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t count) const {
        if (count > bytes_.size() - pos_) throw FormatError("checkpoint archive is truncated");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const ArchiveTensor* Archive::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::string encode_archive(const Archive& archive) {
    std::string out(archive_magic);
    const std::string manifest = archive.manifest.dump();
    put<std::uint64_t>(out, manifest.size());
    out += manifest;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(archive.tensors.size()));
    for (const auto& t : archive.tensors) {
        if (num::shape_size(t.shape) != t.values.size()) {
            throw FormatError("tensor " + t.name + " shape does not match its data");
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t dim : t.shape) put<std::uint64_t>(out, dim);
        for (float v : t.values) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    put<std::uint64_t>(out, fnv1a(out));
    return out;
}

Archive decode_archive(std::string_view bytes) {
    if (bytes.size() < archive_magic.size() + 8 || bytes.substr(0, archive_magic.size()) != archive_magic) {
        throw FormatError("not a VMSST1 checkpoint (bad magic or version)");
    }
    const std::string_view body = bytes.substr(0, bytes.size() - 8);
    Reader tail(bytes.substr(bytes.size() - 8));
    if (tail.get<std::uint64_t>() != fnv1a(body)) throw FormatError("checkpoint checksum mismatch");

    Reader in(body);
    in.take(archive_magic.size());
    Archive archive;
    const auto manifest_len = in.get<std::uint64_t>();
    try {
        archive.manifest = nlohmann::json::parse(in.take(static_cast<std::size_t>(manifest_len)));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    const auto count = in.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        ArchiveTensor t;
        t.name = std::string(in.take(in.get<std::uint32_t>()));
        const auto rank = in.get<std::uint32_t>();
        if (rank > 8) throw FormatError("tensor " + t.name + " has implausible rank");
        for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
        const std::size_t n = num::shape_size(t.shape);
        if (n > in.remaining() / 4) throw FormatError("checkpoint archive is truncated");
        t.values.resize(n);
        for (float& v : t.values) v = std::bit_cast<float>(in.get<std::uint32_t>());
        archive.tensors.push_back(std::move(t));
    }
    if (in.remaining() != 0) throw FormatError("trailing bytes in checkpoint archive");
    return archive;
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
    const std::string bytes = encode_archive(archive);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return decode_archive(buffer.str());
}

template <typename Real>
void export_parameters(const ParameterSet<Real>& params, Archive& archive, const std::string& prefix) {
    for (const auto& e : params.entries()) {
        ArchiveTensor t{prefix + e.name, e.tensor.shape(), {}};
        t.values.assign(e.tensor.data().begin(), e.tensor.data().end());
        archive.tensors.push_back(std::move(t));
    }
}

template <typename Real>
void import_parameters(ParameterSet<Real>& params, const Archive& archive, const std::string& prefix) {
    std::vector<const ArchiveTensor*> sources;
    for (const auto& e : params.entries()) {
        const ArchiveTensor* t = archive.find(prefix + e.name);
        if (t == nullptr) throw FormatError("checkpoint lacks tensor " + prefix + e.name);
        if (t->shape != e.tensor.shape()) {
            throw FormatError("checkpoint tensor " + t->name + " has shape " + num::shape_string(t->shape) +
                              ", expected " + num::shape_string(e.tensor.shape()));
        }
        sources.push_back(t);
    }
    for (std::size_t i = 0; i < sources.size(); ++i) {
        auto dst = params.entries()[i].tensor;
        std::copy(sources[i]->values.begin(), sources[i]->values.end(), dst.data().begin());
    }
}

template void export_parameters(const ParameterSet<float>&, Archive&, const std::string&);
template void export_parameters(const ParameterSet<double>&, Archive&, const std::string&);
template void import_parameters(ParameterSet<float>&, const Archive&, const std::string&);
template void import_parameters(ParameterSet<double>&, const Archive&, const std::string&);

void save_model(const Model<float>& model, const std::filesystem::path& path, nlohmann::json extra) {
    Archive archive;
    archive.manifest = extra.is_null() ? nlohmann::json::object() : std::move(extra);
    archive.manifest["model"] = model.config();
    export_parameters(model.parameters(), archive);
    write_archive(archive, path);
}

Model<float> load_model(const std::filesystem::path& path) {
    const Archive archive = read_archive(path);
    if (!archive.manifest.contains("model")) throw FormatError("checkpoint manifest has no model config");
    ModelConfig config = archive.manifest.at("model").get<ModelConfig>();
    Model<float> model(config, 0);
    import_parameters(model.parameters(), archive);
    return model;
}

}  // namespace vmsst::model

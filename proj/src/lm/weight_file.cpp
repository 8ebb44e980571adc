#include "isinv/lm/weight_file.hpp"

#include "isinv/core/errors.hpp"

namespace isinv {

const Tensor& WeightFile::get(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw FormatError(magic + " file has no tensor '" + name + "'");
}

bool WeightFile::contains(const std::string& name) const {
    for (const auto& entry : tensors) {
        if (entry.first == name) return true;
    }
    return false;
}

Bytes encode_weight_file(const WeightFile& file) {
    if (file.magic.size() != 4) throw FormatError("weight file magic must be 4 bytes");
    ByteWriter w;
    w.put_tag(file.magic);
    w.put<std::uint16_t>(file.version);
    w.put_string(file.config_json);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
    for (const auto& [name, t] : file.tensors) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.put_tag(name);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (double v : t.data) w.put<float>(static_cast<float>(v));
    }
    return w.take();
}

WeightFile decode_weight_file(std::span<const std::uint8_t> bytes, const std::string& expected_magic) {
    ByteReader r(bytes);
    WeightFile file;
    file.magic = r.get_tag(4);
    if (file.magic != expected_magic) {
        throw FormatError("bad magic '" + file.magic + "', expected '" + expected_magic + "'");
    }
    file.version = r.get<std::uint16_t>();
    if (file.version != kWeightFileVersion) {
        throw FormatError("unsupported " + expected_magic + " version " + std::to_string(file.version));
    }
    file.config_json = r.get_string();
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_tag(r.get<std::uint16_t>());
        const auto rank = r.get<std::uint8_t>();
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint32_t>();
        Tensor t(shape);
        for (double& v : t.data) v = static_cast<double>(r.get<float>());
        file.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (!r.done()) throw FormatError("trailing bytes after " + expected_magic + " tensors");
    return file;
}

void save_weight_file(const std::string& path, const WeightFile& file) { write_file(path, encode_weight_file(file)); }

WeightFile load_weight_file(const std::string& path, const std::string& expected_magic) {
    return decode_weight_file(read_file(path), expected_magic);
}

}  // namespace isinv

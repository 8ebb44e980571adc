#include "isinv/harness/is_format.hpp"

#include "isinv/core/errors.hpp"

namespace isinv {

namespace {

constexpr const char* kFrameMagic = "ISF1";
constexpr const char* kContainerMagic = "ISC1";

}  // namespace

Bytes encode_frame(const Tensor& h, std::size_t layer, FrameDtype dtype) {
    if (h.rank() != 2) throw DimensionError("encode_frame: states must be a matrix");
    if (layer > 0xffff || h.rows() > 0xffffffffULL || h.cols() > 0xffffffffULL) {
        throw DimensionError("encode_frame: header field overflow");
    }
    ByteWriter payload;
    for (double v : h.data) {
        if (dtype == FrameDtype::f32) {
            payload.put<float>(static_cast<float>(v));
        } else {
            payload.put<double>(v);
        }
    }
    ByteWriter w;
    w.put_tag(kFrameMagic);
    w.put<std::uint16_t>(kFrameVersion);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(layer));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(h.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(h.cols()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype));
    w.put_bytes(payload.bytes());
    w.put<std::uint32_t>(crc32(payload.bytes()));
    return w.take();
}

ISFrame decode_frame(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.get_tag(4) != kFrameMagic) throw FormatError("frame: bad magic");
    ISFrame f;
    f.version = r.get<std::uint16_t>();
    if (f.version != kFrameVersion) throw FormatError("frame: unsupported version " + std::to_string(f.version));
    f.layer = r.get<std::uint16_t>();
    const auto n = r.get<std::uint32_t>();
    const auto d = r.get<std::uint32_t>();
    const auto tag = r.get<std::uint8_t>();
    if (tag > 1) throw FormatError("frame: unknown dtype " + std::to_string(tag));
    f.dtype = static_cast<FrameDtype>(tag);
    const std::size_t width = f.dtype == FrameDtype::f32 ? 4 : 8;
    const std::size_t count = static_cast<std::size_t>(n) * d;
    if (r.remaining() != count * width + 4) {
        throw FormatError("frame: payload length " + std::to_string(r.remaining() >= 4 ? r.remaining() - 4 : 0) +
                          " does not match header (" + std::to_string(count * width) + ")");
    }
    const auto payload = r.get_bytes(count * width);
    const auto stored = r.get<std::uint32_t>();
    if (stored != crc32(payload)) throw FormatError("frame: checksum mismatch");
    f.h = Tensor::matrix(n, d);
    ByteReader p(payload);
    for (double& v : f.h.data) v = f.dtype == FrameDtype::f32 ? static_cast<double>(p.get<float>()) : p.get<double>();
    return f;
}

Bytes encode_container(std::span<const ISRecord> records) {
    ByteWriter w;
    w.put_tag(kContainerMagic);
    w.put<std::uint16_t>(kContainerVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
    for (const auto& rec : records) {
        w.put_string(rec.text);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(rec.frame.size()));
        w.put_bytes(rec.frame);
    }
    return w.take();
}

std::vector<ISRecord> decode_container(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.get_tag(4) != kContainerMagic) throw FormatError("container: bad magic");
    const auto version = r.get<std::uint16_t>();
    if (version != kContainerVersion) throw FormatError("container: unsupported version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    std::vector<ISRecord> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        try {
            ISRecord rec;
            rec.text = r.get_string();
            const auto len = r.get<std::uint32_t>();
            const auto frame = r.get_bytes(len);
            decode_frame(frame);
            rec.frame.assign(frame.begin(), frame.end());
            out.push_back(std::move(rec));
        } catch (const FormatError& e) {
            throw FormatError("container frame " + std::to_string(i) + ": " + e.what());
        }
    }
    if (!r.done()) throw FormatError("container: trailing bytes after frame " + std::to_string(count));
    return out;
}

void export_is(const std::string& path, std::span<const ISRecord> records) {
    write_file(path, encode_container(records));
}

std::vector<ISRecord> import_is(const std::string& path) { return decode_container(read_file(path)); }

std::vector<ISRecord> records_from_capture(std::span<const CapturedIS> captured) {
    std::vector<ISRecord> out;
    out.reserve(captured.size());
    for (const auto& c : captured) out.push_back({c.text, encode_frame(c.states.h, c.states.layer)});
    return out;
}

std::vector<DecodedRecord> decode_records(std::span<const ISRecord> records) {
    std::vector<DecodedRecord> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        try {
            out.push_back({records[i].text, decode_frame(records[i].frame)});
        } catch (const FormatError& e) {
            throw FormatError("frame " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace isinv

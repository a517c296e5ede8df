#include "svpipe/dicom_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace svpipe::dicom {

namespace {

constexpr Tag kItem = tag(0xFFFE, 0xE000);
constexpr Tag kItemDelimitation = tag(0xFFFE, 0xE00D);
constexpr Tag kSequenceDelimitation = tag(0xFFFE, 0xE0DD);
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;
constexpr std::size_t kPreamble = 128;
constexpr const char* kImplementationUid = "2.25.302573451927463081240311";

bool long_length_vr(const std::string& vr) {
    static const std::set<std::string> vrs{"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "SV", "UC", "UN", "UR", "UT", "UV"};
    return vrs.count(vr) != 0;
}

std::uint16_t rd16(const std::string& b, std::size_t p) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(b[p]) | (static_cast<unsigned char>(b[p + 1]) << 8));
}

std::uint32_t rd32(const std::string& b, std::size_t p) {
    return static_cast<std::uint32_t>(rd16(b, p)) | (static_cast<std::uint32_t>(rd16(b, p + 2)) << 16);
}

void wr16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

void wr32(std::string& out, std::uint32_t v) {
    wr16(out, static_cast<std::uint16_t>(v & 0xffff));
    wr16(out, static_cast<std::uint16_t>(v >> 16));
}

std::string tag_string(Tag t) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "(%04X,%04X)", t >> 16, t & 0xffff);
    return buf;
}

class Parser {
public:
    Parser(const std::string& bytes, DataSet& out) : b_(bytes), out_(out) {}

    // Reads elements from `pos` up to `end`. Elements go to the data set only
    // at nesting depth 0. Stops after an item delimiter when `in_item`.
    std::size_t parse(std::size_t pos, std::size_t end, bool explicit_vr, int depth, bool in_item,
                      bool meta_only = false) {
        while (pos < end) {
            need(pos, 4, end);
            const Tag t = (static_cast<Tag>(rd16(b_, pos)) << 16) | rd16(b_, pos + 2);
            if (meta_only && (t >> 16) != 0x0002) return pos;
            if (t == kItemDelimitation) {
                if (!in_item) throw CorruptDicomError("item delimiter outside an item");
                need(pos, 8, end);
                return pos + 8;
            }
            if ((t >> 16) == 0xFFFE) throw CorruptDicomError("unexpected delimiter " + tag_string(t));
            pos += 4;
            std::string vr;
            std::uint32_t len = 0;
            if (explicit_vr) {
                need(pos, 4, end);
                vr = b_.substr(pos, 2);
                if (!std::isupper(static_cast<unsigned char>(vr[0])) || !std::isupper(static_cast<unsigned char>(vr[1])))
                    throw CorruptDicomError("invalid VR at " + tag_string(t));
                if (long_length_vr(vr)) {
                    need(pos, 8, end);
                    len = rd32(b_, pos + 4);
                    pos += 8;
                } else {
                    len = rd16(b_, pos + 2);
                    pos += 4;
                }
            } else {
                need(pos, 4, end);
                len = rd32(b_, pos);
                pos += 4;
            }
            if (len == kUndefinedLength) {
                if (t == tags::kPixelData) throw UnsupportedDicomError("encapsulated (compressed) pixel data");
                pos = skip_sequence(pos, end, explicit_vr, depth);
                if (depth == 0) ++out_.skipped_sequences;
                continue;
            }
            need(pos, len, end);
            if (vr == "SQ") {
                if (depth == 0) ++out_.skipped_sequences;
            } else if (depth == 0) {
                out_.set_bytes(t, vr, b_.substr(pos, len));
            }
            pos += len;
        }
        if (in_item) throw CorruptDicomError("unterminated item");
        return pos;
    }

private:
    void need(std::size_t pos, std::size_t n, std::size_t end) const {
        if (pos + n > end || pos + n < pos) throw CorruptDicomError("truncated element");
    }

    std::size_t skip_sequence(std::size_t pos, std::size_t end, bool explicit_vr, int depth) {
        if (depth > 32) throw CorruptDicomError("sequence nesting too deep");
        while (true) {
            need(pos, 8, end);
            const Tag t = (static_cast<Tag>(rd16(b_, pos)) << 16) | rd16(b_, pos + 2);
            const std::uint32_t len = rd32(b_, pos + 4);
            pos += 8;
            if (t == kSequenceDelimitation) return pos;
            if (t != kItem) throw CorruptDicomError("expected sequence item, got " + tag_string(t));
            if (len == kUndefinedLength) {
                pos = parse(pos, end, explicit_vr, depth + 1, true);
            } else {
                need(pos, len, end);
                pos += len;
            }
        }
    }

    const std::string& b_;
    DataSet& out_;
};

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && s[i] == ' ') ++i;
    return s.substr(i);
}

std::string format_decimal(double v) {
    // DS values are limited to 16 characters.
    char buf[64];
    for (int prec = 12; prec >= 1; --prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strlen(buf) <= 16) return buf;
    }
    throw ContractViolation("value cannot be encoded as DS");
}

void append_element(std::string& out, Tag t, const Element& e) {
    std::string value = e.bytes;
    if (value.size() % 2) value.push_back((e.vr == "UI" || e.vr == "OB" || e.vr == "OW" || e.vr == "UN") ? '\0' : ' ');
    wr16(out, static_cast<std::uint16_t>(t >> 16));
    wr16(out, static_cast<std::uint16_t>(t & 0xffff));
    out += e.vr;
    if (long_length_vr(e.vr)) {
        wr16(out, 0);
        wr32(out, static_cast<std::uint32_t>(value.size()));
    } else {
        if (value.size() > 0xffff) throw ContractViolation("value too long for VR " + e.vr);
        wr16(out, static_cast<std::uint16_t>(value.size()));
    }
    out += value;
}

}  // namespace

const Element* DataSet::find(Tag t) const {
    const auto it = elements_.find(t);
    return it == elements_.end() ? nullptr : &it->second;
}

std::optional<std::string> DataSet::get_string(Tag t) const {
    const Element* e = find(t);
    if (!e) return std::nullopt;
    return trim(e->bytes);
}

std::optional<std::vector<double>> DataSet::get_decimals(Tag t) const {
    const auto s = get_string(t);
    if (!s) return std::nullopt;
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= s->size()) {
        const std::size_t stop = std::min(s->find('\\', start), s->size());
        const std::string part = trim(s->substr(start, stop - start));
        double v = 0;
        const char* first = part.data();
        if (!part.empty() && part[0] == '+') ++first;
        const auto res = std::from_chars(first, part.data() + part.size(), v);
        if (part.empty() || res.ec != std::errc() || res.ptr != part.data() + part.size())
            throw CorruptDicomError("malformed decimal string in " + tag_string(t) + ": '" + *s + "'");
        out.push_back(v);
        start = stop + 1;
    }
    return out;
}

std::optional<long> DataSet::get_integer_string(Tag t) const {
    const auto s = get_string(t);
    if (!s) return std::nullopt;
    const std::string first = trim(s->substr(0, s->find('\\')));
    long v = 0;
    const char* p = first.data();
    if (!first.empty() && first[0] == '+') ++p;
    const auto res = std::from_chars(p, first.data() + first.size(), v);
    if (first.empty() || res.ec != std::errc() || res.ptr != first.data() + first.size())
        throw CorruptDicomError("malformed integer string in " + tag_string(t));
    return v;
}

std::optional<std::uint16_t> DataSet::get_ushort(Tag t) const {
    const Element* e = find(t);
    if (!e) return std::nullopt;
    if (e->bytes.size() < 2) throw CorruptDicomError("short US value in " + tag_string(t));
    return rd16(e->bytes, 0);
}

void DataSet::set_string(Tag t, const std::string& vr, std::string value) { set_bytes(t, vr, std::move(value)); }

void DataSet::set_decimals(Tag t, const std::vector<double>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += '\\';
        s += format_decimal(values[i]);
    }
    set_bytes(t, "DS", std::move(s));
}

void DataSet::set_integer_string(Tag t, long value) { set_bytes(t, "IS", std::to_string(value)); }

void DataSet::set_ushort(Tag t, std::uint16_t value) {
    std::string s;
    wr16(s, value);
    set_bytes(t, "US", std::move(s));
}

void DataSet::set_bytes(Tag t, const std::string& vr, std::string bytes) {
    elements_[t] = Element{vr, std::move(bytes)};
}

DataSet parse_bytes(const std::string& bytes) {
    if (bytes.size() < kPreamble + 4 || bytes.compare(kPreamble, 4, "DICM") != 0)
        throw NotDicomError("missing DICM preamble");
    DataSet ds;
    Parser p(bytes, ds);
    const std::size_t body = p.parse(kPreamble + 4, bytes.size(), true, 0, false, true);
    const auto ts = ds.get_string(tags::kTransferSyntax);
    if (!ts) throw CorruptDicomError("missing transfer syntax");
    bool explicit_vr = true;
    if (*ts == kImplicitVrLittleEndian)
        explicit_vr = false;
    else if (*ts != kExplicitVrLittleEndian)
        throw UnsupportedDicomError("unsupported transfer syntax " + *ts);
    p.parse(body, bytes.size(), explicit_vr, 0, false);
    return ds;
}

DataSet read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestError("cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_bytes(bytes);
}

std::string serialize(const DataSet& ds) {
    std::string meta;
    const auto sop_class = ds.get_string(tags::kSopClassUid).value_or(kMrImageStorage);
    const auto sop_instance = ds.get_string(tags::kSopInstanceUid).value_or("");
    append_element(meta, tag(0x0002, 0x0001), Element{"OB", std::string("\0\1", 2)});
    append_element(meta, tags::kMediaStorageSopClass, Element{"UI", sop_class});
    append_element(meta, tags::kMediaStorageSopInstance, Element{"UI", sop_instance});
    append_element(meta, tags::kTransferSyntax, Element{"UI", kExplicitVrLittleEndian});
    append_element(meta, tag(0x0002, 0x0012), Element{"UI", kImplementationUid});

    std::string out(kPreamble, '\0');
    out += "DICM";
    std::string group_length;
    wr32(group_length, static_cast<std::uint32_t>(meta.size()));
    append_element(out, tag(0x0002, 0x0000), Element{"UL", group_length});
    out += meta;
    for (const auto& [t, e] : ds.elements()) {
        if ((t >> 16) == 0x0002) continue;
        if (e.vr.size() != 2) throw ContractViolation("cannot serialize element without VR " + tag_string(t));
        append_element(out, t, e);
    }
    return out;
}

void write_file(const std::filesystem::path& path, const DataSet& ds) {
    const std::string bytes = serialize(ds);
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IngestError("failed to write " + path.string());
}

std::string encode_u16(const std::vector<std::uint16_t>& pixels) {
    std::string out;
    out.reserve(pixels.size() * 2);
    for (auto v : pixels) wr16(out, v);
    return out;
}

}  // namespace svpipe::dicom

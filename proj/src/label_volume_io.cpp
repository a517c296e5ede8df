#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "svpipe/error.hpp"
#include "svpipe/label_volume.hpp"

namespace svpipe {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'L', 'V'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 * 5 + 8 * 3;

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& pos) {
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

Mask LabelVolume::plane(int p, int s) const {
    Mask m(rows, cols);
    const auto first = labels.begin() + static_cast<std::ptrdiff_t>(index(p, s, 0, 0));
    std::copy(first, first + static_cast<std::ptrdiff_t>(slice_size()), m.data.begin());
    return m;
}

void LabelVolume::set_plane(int p, int s, const Mask& m) {
    if (m.rows != rows || m.cols != cols) throw ContractViolation("plane size does not match label volume");
    std::copy(m.data.begin(), m.data.end(), labels.begin() + static_cast<std::ptrdiff_t>(index(p, s, 0, 0)));
}

void validate(const LabelVolume& v) {
    if (v.phases < 0 || v.slices < 0 || v.rows < 0 || v.cols < 0)
        throw ContractViolation("label volume dimensions must be non-negative");
    if (v.labels.size() != static_cast<std::size_t>(v.phases) * v.phase_size())
        throw ContractViolation("label volume data length does not match its dimensions");
    if (!(v.pixel_spacing[0] > 0 && v.pixel_spacing[1] > 0 && v.slice_gap > 0))
        throw ContractViolation("label volume geometry must be positive");
    if (std::any_of(v.labels.begin(), v.labels.end(), [](std::uint8_t l) { return l > kMyocardium; }))
        throw ContractViolation("label values must lie in {0,1,2}");
}

// Little-endian host assumed (x86-64 / aarch64).
void write_label_volume(const std::filesystem::path& path, const LabelVolume& v) {
    validate(v);
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    for (int d : {v.phases, v.slices, v.rows, v.cols}) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put<double>(out, v.pixel_spacing[0]);
    put<double>(out, v.pixel_spacing[1]);
    put<double>(out, v.slice_gap);
    out.append(reinterpret_cast<const char*>(v.labels.data()), v.labels.size());
    std::ofstream f(path, std::ios::binary);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("failed to write label volume " + path.string());
}

LabelVolume read_label_volume(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open label volume " + path.string());
    const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < kHeaderBytes || in.compare(0, 4, kMagic, 4) != 0)
        throw Error("not a label volume file: " + path.string());
    std::size_t pos = 4;
    if (get<std::uint32_t>(in, pos) != kVersion) throw Error("unsupported label volume version in " + path.string());
    LabelVolume v;
    v.phases = static_cast<int>(get<std::uint32_t>(in, pos));
    v.slices = static_cast<int>(get<std::uint32_t>(in, pos));
    v.rows = static_cast<int>(get<std::uint32_t>(in, pos));
    v.cols = static_cast<int>(get<std::uint32_t>(in, pos));
    v.pixel_spacing[0] = get<double>(in, pos);
    v.pixel_spacing[1] = get<double>(in, pos);
    v.slice_gap = get<double>(in, pos);
    const std::size_t n = static_cast<std::size_t>(v.phases) * v.slices * v.rows * v.cols;
    if (in.size() - kHeaderBytes != n) throw Error("label volume payload length mismatch in " + path.string());
    v.labels.assign(in.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes), in.end());
    validate(v);
    return v;
}

}  // namespace svpipe

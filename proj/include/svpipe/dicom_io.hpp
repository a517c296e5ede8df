#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "svpipe/error.hpp"

namespace svpipe::dicom {

/// (group << 16) | element.
using Tag = std::uint32_t;

constexpr Tag tag(std::uint16_t group, std::uint16_t element) {
    return (static_cast<Tag>(group) << 16) | element;
}

namespace tags {
inline constexpr Tag kTransferSyntax = tag(0x0002, 0x0010);
inline constexpr Tag kMediaStorageSopClass = tag(0x0002, 0x0002);
inline constexpr Tag kMediaStorageSopInstance = tag(0x0002, 0x0003);
inline constexpr Tag kSopClassUid = tag(0x0008, 0x0016);
inline constexpr Tag kSopInstanceUid = tag(0x0008, 0x0018);
inline constexpr Tag kModality = tag(0x0008, 0x0060);
inline constexpr Tag kSeriesDescription = tag(0x0008, 0x103E);
inline constexpr Tag kPatientId = tag(0x0010, 0x0020);
inline constexpr Tag kSliceThickness = tag(0x0018, 0x0050);
inline constexpr Tag kSpacingBetweenSlices = tag(0x0018, 0x0088);
inline constexpr Tag kTriggerTime = tag(0x0018, 0x1060);
inline constexpr Tag kStudyInstanceUid = tag(0x0020, 0x000D);
inline constexpr Tag kSeriesInstanceUid = tag(0x0020, 0x000E);
inline constexpr Tag kSeriesNumber = tag(0x0020, 0x0011);
inline constexpr Tag kInstanceNumber = tag(0x0020, 0x0013);
inline constexpr Tag kImagePosition = tag(0x0020, 0x0032);
inline constexpr Tag kImageOrientation = tag(0x0020, 0x0037);
inline constexpr Tag kSamplesPerPixel = tag(0x0028, 0x0002);
inline constexpr Tag kPhotometric = tag(0x0028, 0x0004);
inline constexpr Tag kNumberOfFrames = tag(0x0028, 0x0008);
inline constexpr Tag kRows = tag(0x0028, 0x0010);
inline constexpr Tag kColumns = tag(0x0028, 0x0011);
inline constexpr Tag kPixelSpacing = tag(0x0028, 0x0030);
inline constexpr Tag kBitsAllocated = tag(0x0028, 0x0100);
inline constexpr Tag kBitsStored = tag(0x0028, 0x0101);
inline constexpr Tag kHighBit = tag(0x0028, 0x0102);
inline constexpr Tag kPixelRepresentation = tag(0x0028, 0x0103);
inline constexpr Tag kRescaleIntercept = tag(0x0028, 0x1052);
inline constexpr Tag kRescaleSlope = tag(0x0028, 0x1053);
inline constexpr Tag kPixelData = tag(0x7FE0, 0x0010);
}  // namespace tags

inline constexpr const char* kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";
inline constexpr const char* kImplicitVrLittleEndian = "1.2.840.10008.1.2";
inline constexpr const char* kMrImageStorage = "1.2.840.10008.5.1.4.1.1.4";

/// The file is not a DICOM Part-10 file (no preamble/magic).
class NotDicomError : public IngestError {
public:
    using IngestError::IngestError;
};

/// The file claims to be DICOM but is truncated or malformed.
class CorruptDicomError : public IngestError {
public:
    using IngestError::IngestError;
};

/// Valid DICOM using a feature outside the supported subset.
class UnsupportedDicomError : public IngestError {
public:
    using IngestError::IngestError;
};

struct Element {
    std::string vr;  // empty when read with implicit VR
    std::string bytes;
};

/// Flat top-level data set; sequence contents are skipped on read.
class DataSet {
public:
    [[nodiscard]] bool has(Tag t) const { return elements_.count(t) != 0; }
    [[nodiscard]] const Element* find(Tag t) const;
    [[nodiscard]] const std::map<Tag, Element>& elements() const { return elements_; }

    /// Text value with trailing padding (spaces, NULs) removed.
    [[nodiscard]] std::optional<std::string> get_string(Tag t) const;
    /// Backslash-separated decimal strings (DS).
    [[nodiscard]] std::optional<std::vector<double>> get_decimals(Tag t) const;
    /// Integer string (IS), first value.
    [[nodiscard]] std::optional<long> get_integer_string(Tag t) const;
    /// Unsigned short (US), first value.
    [[nodiscard]] std::optional<std::uint16_t> get_ushort(Tag t) const;

    void set_string(Tag t, const std::string& vr, std::string value);
    void set_decimals(Tag t, const std::vector<double>& values);
    void set_integer_string(Tag t, long value);
    void set_ushort(Tag t, std::uint16_t value);
    void set_bytes(Tag t, const std::string& vr, std::string bytes);

    /// Sequence elements seen (and skipped) while reading.
    int skipped_sequences = 0;

private:
    std::map<Tag, Element> elements_;
};

/// Parses a Part-10 file. Explicit and implicit VR little endian only.
DataSet read_file(const std::filesystem::path& path);
DataSet parse_bytes(const std::string& bytes);

/// Serializes as explicit VR little endian with a generated file-meta group.
std::string serialize(const DataSet& ds);
void write_file(const std::filesystem::path& path, const DataSet& ds);

/// Encodes 16-bit unsigned pixels as little-endian bytes.
std::string encode_u16(const std::vector<std::uint16_t>& pixels);

}  // namespace svpipe::dicom

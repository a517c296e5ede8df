#include "svpipe/ingest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <thread>

#include "svpipe/dicom_io.hpp"
#include "svpipe/error.hpp"
#include "svpipe/hash.hpp"

namespace svpipe {

namespace fs = std::filesystem;

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

namespace {

Vec3 row_dir(const Orientation& o) { return {o[0], o[1], o[2]}; }
Vec3 col_dir(const Orientation& o) { return {o[3], o[4], o[5]}; }

Vec3 unit_normal(const Orientation& o) {
    Vec3 n = cross(row_dir(o), col_dir(o));
    const double len = std::sqrt(dot(n, n));
    for (auto& v : n) v /= len;
    return n;
}

enum class Outcome { ok, not_dicom, corrupt, unsupported, missing_required, invalid_geometry };

struct FileResult {
    Outcome outcome = Outcome::ok;
    std::string message;
    DicomImageMeta meta;
};

FileResult parse_one(const fs::path& path, const std::string& file_id) {
    namespace t = dicom::tags;
    FileResult r;
    try {
        const dicom::DataSet ds = dicom::read_file(path);
        const auto series = ds.get_string(t::kSeriesInstanceUid);
        const auto rows = ds.get_ushort(t::kRows);
        const auto cols = ds.get_ushort(t::kColumns);
        const auto spacing = ds.get_decimals(t::kPixelSpacing);
        const auto iop = ds.get_decimals(t::kImageOrientation);
        const auto ipp = ds.get_decimals(t::kImagePosition);
        const auto instance = ds.get_integer_string(t::kInstanceNumber);
        const dicom::Element* pixels = ds.find(t::kPixelData);
        if (!series || series->empty() || !rows || !cols || !spacing || !iop || !ipp || !instance || !pixels) {
            r.outcome = Outcome::missing_required;
            r.message = file_id + ": missing required tag";
            return r;
        }
        if (spacing->size() != 2 || iop->size() != 6 || ipp->size() != 3) {
            r.outcome = Outcome::invalid_geometry;
            r.message = file_id + ": wrong value multiplicity in geometry tags";
            return r;
        }
        if (ds.get_integer_string(t::kNumberOfFrames).value_or(1) > 1) {
            r.outcome = Outcome::unsupported;
            r.message = file_id + ": multi-frame images are not supported";
            return r;
        }
        if (ds.get_ushort(t::kSamplesPerPixel).value_or(1) != 1) {
            r.outcome = Outcome::unsupported;
            r.message = file_id + ": colour images are not supported";
            return r;
        }
        const auto photometric = ds.get_string(t::kPhotometric).value_or("MONOCHROME2");
        if (photometric != "MONOCHROME2" && photometric != "MONOCHROME1") {
            r.outcome = Outcome::unsupported;
            r.message = file_id + ": photometric interpretation " + photometric;
            return r;
        }
        const int bits = ds.get_ushort(t::kBitsAllocated).value_or(16);
        if (bits != 8 && bits != 16) {
            r.outcome = Outcome::unsupported;
            r.message = file_id + ": bits allocated " + std::to_string(bits);
            return r;
        }
        const bool is_signed = ds.get_ushort(t::kPixelRepresentation).value_or(0) == 1;
        const std::size_t n = static_cast<std::size_t>(*rows) * *cols;
        const std::size_t bytes_per = static_cast<std::size_t>(bits / 8);
        if (n == 0 || pixels->bytes.size() < n * bytes_per) {
            r.outcome = Outcome::corrupt;
            r.message = file_id + ": pixel data shorter than rows*cols";
            return r;
        }
        const double slope = ds.get_decimals(t::kRescaleSlope).value_or(std::vector<double>{1.0}).at(0);
        const double intercept = ds.get_decimals(t::kRescaleIntercept).value_or(std::vector<double>{0.0}).at(0);

        DicomImageMeta& m = r.meta;
        m.file_id = file_id;
        m.series_uid = *series;
        m.instance_uid = ds.get_string(t::kSopInstanceUid).value_or("");
        m.rows = *rows;
        m.cols = *cols;
        m.pixel_spacing = {(*spacing)[0], (*spacing)[1]};
        std::copy(iop->begin(), iop->end(), m.orientation.begin());
        std::copy(ipp->begin(), ipp->end(), m.position.begin());
        if (const auto sbs = ds.get_decimals(t::kSpacingBetweenSlices); sbs && !sbs->empty())
            m.spacing_between_slices = std::abs((*sbs)[0]);
        if (const auto tt = ds.get_decimals(t::kTriggerTime); tt && !tt->empty()) m.trigger_time = (*tt)[0];
        m.instance_number = *instance;
        m.pixels = ImageF(m.rows, m.cols);
        const auto* raw = reinterpret_cast<const unsigned char*>(pixels->bytes.data());
        for (std::size_t i = 0; i < n; ++i) {
            double v = 0;
            if (bits == 8) {
                v = is_signed ? static_cast<double>(static_cast<std::int8_t>(raw[i])) : raw[i];
            } else {
                const auto u = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
                v = is_signed ? static_cast<double>(static_cast<std::int16_t>(u)) : u;
            }
            m.pixels.data[i] = static_cast<float>(v * slope + intercept);
        }
        if (const std::string why = validate_geometry(m); !why.empty()) {
            r.outcome = Outcome::invalid_geometry;
            r.message = file_id + ": " + why;
        }
    } catch (const dicom::NotDicomError&) {
        r.outcome = Outcome::not_dicom;
    } catch (const dicom::UnsupportedDicomError& e) {
        r.outcome = Outcome::unsupported;
        r.message = file_id + ": " + e.what();
    } catch (const IngestError& e) {
        r.outcome = Outcome::corrupt;
        r.message = file_id + ": " + e.what();
    }
    return r;
}

bool close_all(const double* a, const double* b, std::size_t n, double tol) {
    for (std::size_t i = 0; i < n; ++i)
        if (std::abs(a[i] - b[i]) > tol) return false;
    return true;
}

bool same_position(const Vec3& a, const Vec3& b, double tol) { return close_all(a.data(), b.data(), 3, tol); }

// Trigger times when every frame has one, else instance numbers.
std::vector<double> temporal_keys(const std::vector<DicomImageMeta*>& frames) {
    const bool all_trigger =
        std::all_of(frames.begin(), frames.end(), [](const DicomImageMeta* m) { return m->trigger_time.has_value(); });
    std::vector<double> keys;
    for (const auto* m : frames) keys.push_back(all_trigger ? *m->trigger_time : static_cast<double>(m->instance_number));
    return keys;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// Orders slices by content so that grouping never depends on input order.
bool canonical_less(const CineSlice& a, const CineSlice& b) {
    if (a.series_uid != b.series_uid) return a.series_uid < b.series_uid;
    if (a.position != b.position) return a.position < b.position;
    return a.file_ids < b.file_ids;
}

bool same_geometry_class(const CineSlice& a, const CineSlice& b, const GroupingTolerances& tol) {
    return a.rows == b.rows && a.cols == b.cols && a.frames.size() == b.frames.size() &&
           close_all(a.orientation.data(), b.orientation.data(), 6, tol.orientation) &&
           close_all(a.pixel_spacing.data(), b.pixel_spacing.data(), 2, tol.pixel_spacing_mm);
}

bool gap_matches(double gap, double step, double rel) { return std::abs(gap - step) <= rel * step; }

// Tag step when every slice carries a consistent SpacingBetweenSlices, else
// the mean of the largest set of consecutive-bucket gaps agreeing with one
// gap (smallest gap wins ties). The result is the stack's slice gap.
double choose_step(const std::vector<const CineSlice*>& members, const std::vector<double>& bucket_offsets,
                   const GroupingTolerances& tol) {
    std::vector<double> tags;
    for (const auto* s : members)
        if (s->spacing_between_slices) tags.push_back(*s->spacing_between_slices);
    if (tags.size() == members.size() && !tags.empty()) {
        std::sort(tags.begin(), tags.end());
        const double med = tags[tags.size() / 2];
        if (med > 0 && std::all_of(tags.begin(), tags.end(), [&](double g) { return gap_matches(g, med, tol.gap_relative); }))
            return med;
    }
    std::vector<double> gaps;
    for (std::size_t i = 1; i < bucket_offsets.size(); ++i) gaps.push_back(bucket_offsets[i] - bucket_offsets[i - 1]);
    std::sort(gaps.begin(), gaps.end());
    double best = 0;
    int support = -1;
    for (double g : gaps) {
        int s = 0;
        double sum = 0;
        for (double h : gaps)
            if (gap_matches(h, g, tol.gap_relative)) {
                ++s;
                sum += h;
            }
        if (s > support) {
            support = s;
            best = sum / s;
        }
    }
    return best;
}

std::string make_stack_id(const CineStack& s) {
    Fnv1a64 h;
    for (double v : s.orientation) h.update(fmt("%.4f;", v));
    h.update(fmt("%.4f;", s.pixel_spacing[0]));
    h.update(fmt("%.4f;", s.pixel_spacing[1]));
    h.update(std::to_string(s.rows()) + "x" + std::to_string(s.cols()) + "x" + std::to_string(s.frame_count()) + ";");
    for (const auto& sl : s.slices) {
        h.update(sl.series_uid);
        for (double v : sl.position) h.update(fmt("@%.3f", v));
        h.update(";");
    }
    return "stk-" + h.hex().substr(0, 12);
}

}  // namespace

std::string validate_geometry(const DicomImageMeta& m) {
    const Vec3 r = row_dir(m.orientation), c = col_dir(m.orientation);
    if (std::abs(std::sqrt(dot(r, r)) - 1) > 1e-3 || std::abs(std::sqrt(dot(c, c)) - 1) > 1e-3)
        return "direction cosines are not unit vectors";
    if (std::abs(dot(r, c)) >= 1e-3) return "direction cosines are not orthogonal";
    if (!(m.pixel_spacing[0] > 0 && m.pixel_spacing[1] > 0)) return "pixel spacing must be positive";
    if (m.pixels.rows != m.rows || m.pixels.cols != m.cols) return "pixel data does not match rows/columns";
    return {};
}

ParsedExam parse_exam_directory(const fs::path& dir, int workers) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IngestError("cannot read exam directory " + dir.string());
    std::vector<fs::path> files;
    fs::recursive_directory_iterator it(dir, fs::directory_options::skip_permission_denied, ec);
    if (ec) throw IngestError("cannot read exam directory " + dir.string() + ": " + ec.message());
    for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) throw IngestError("error while listing " + dir.string() + ": " + ec.message());
        if (it->is_regular_file(ec)) files.push_back(it->path());
    }
    std::sort(files.begin(), files.end());

    std::vector<FileResult> results(files.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < files.size(); i = next++)
            results[i] = parse_one(files[i], fs::relative(files[i], dir).generic_string());
    };
    const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(files.size())));
    if (n_threads == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    ParsedExam out;
    auto& d = out.diagnostics;
    d.files_seen = static_cast<int>(files.size());
    for (auto& r : results) {
        switch (r.outcome) {
            case Outcome::ok: out.images.push_back(std::move(r.meta)); continue;
            case Outcome::not_dicom: ++d.not_dicom; continue;
            case Outcome::corrupt: ++d.corrupt; break;
            case Outcome::unsupported: ++d.unsupported; break;
            case Outcome::missing_required: ++d.missing_geometry; break;
            case Outcome::invalid_geometry: ++d.missing_geometry; break;
        }
        d.warnings.push_back(r.message);
    }
    return out;
}

std::vector<CineSeries> collect_cine_series(std::vector<DicomImageMeta> images, CollectDiagnostics* diagnostics) {
    CollectDiagnostics local;
    CollectDiagnostics& diag = diagnostics ? *diagnostics : local;
    std::map<std::string, std::vector<DicomImageMeta*>> by_series;
    for (auto& m : images) by_series[m.series_uid].push_back(&m);

    constexpr double kPositionTol = 0.01;
    std::vector<CineSeries> out;
    for (auto& [uid, members] : by_series) {
        std::sort(members.begin(), members.end(), [](const DicomImageMeta* a, const DicomImageMeta* b) {
            if (a->position != b->position) return a->position < b->position;
            return a->file_id < b->file_id;
        });
        std::vector<std::vector<DicomImageMeta*>> positions;
        for (auto* m : members) {
            bool placed = false;
            for (auto& p : positions)
                if (same_position(p.front()->position, m->position, kPositionTol)) {
                    p.push_back(m);
                    placed = true;
                    break;
                }
            if (!placed) positions.push_back({m});
        }

        CineSeries series{uid, {}};
        std::string reject;
        for (auto& frames : positions) {
            const auto* first = frames.front();
            for (const auto* f : frames)
                if (f->rows != first->rows || f->cols != first->cols ||
                    !close_all(f->orientation.data(), first->orientation.data(), 6, 1e-3))
                    reject = "inconsistent geometry at one position";
            auto keys = temporal_keys(frames);
            std::vector<std::size_t> order(frames.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
            for (std::size_t i = 1; i < order.size(); ++i)
                if (std::abs(keys[order[i]] - keys[order[i - 1]]) <= 1e-6)
                    reject = "duplicate (position, temporal index)";
            if (!reject.empty()) break;
            if (static_cast<int>(frames.size()) < kMinCineFrames) {
                ++diag.non_cine_positions;
                continue;
            }
            CineSlice s;
            s.series_uid = uid;
            s.position = first->position;
            s.orientation = first->orientation;
            s.pixel_spacing = first->pixel_spacing;
            s.rows = first->rows;
            s.cols = first->cols;
            s.spacing_between_slices = first->spacing_between_slices;
            for (std::size_t rank = 0; rank < order.size(); ++rank) {
                auto* m = frames[order[rank]];
                m->temporal_index = static_cast<int>(rank);
                s.file_ids.push_back(m->file_id);
                s.frames.push_back(std::move(m->pixels));
            }
            series.slices.push_back(std::move(s));
        }
        if (!reject.empty()) {
            diag.rejected_series.push_back(uid);
            diag.warnings.push_back("series " + uid + " rejected: " + reject);
            continue;
        }
        if (!series.slices.empty()) out.push_back(std::move(series));
    }
    return out;
}

Vec3 CineStack::normal() const { return unit_normal(orientation); }

std::vector<CineStack> group_into_stacks(std::vector<CineSeries> cine, const GroupingTolerances& tol,
                                         GroupingDiagnostics* diagnostics) {
    GroupingDiagnostics local;
    GroupingDiagnostics& diag = diagnostics ? *diagnostics : local;
    std::vector<CineSlice> slices;
    for (auto& s : cine)
        for (auto& sl : s.slices) slices.push_back(std::move(sl));
    std::sort(slices.begin(), slices.end(), canonical_less);

    // Greedy geometry classes against each class's first member.
    std::vector<std::vector<std::size_t>> classes;
    for (std::size_t i = 0; i < slices.size(); ++i) {
        bool placed = false;
        for (auto& c : classes)
            if (same_geometry_class(slices[c.front()], slices[i], tol)) {
                c.push_back(i);
                placed = true;
                break;
            }
        if (!placed) classes.push_back({i});
    }
    diag.geometry_classes = static_cast<int>(classes.size());

    std::vector<bool> taken(slices.size(), false);
    std::vector<CineStack> stacks;
    for (const auto& members : classes) {
        const Vec3 n = unit_normal(slices[members.front()].orientation);
        std::vector<std::pair<double, std::size_t>> by_offset;
        for (auto i : members) by_offset.emplace_back(dot(slices[i].position, n), i);
        std::stable_sort(by_offset.begin(), by_offset.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });

        // Buckets of slices at the same location along the normal.
        std::vector<double> bucket_offset;
        std::vector<std::vector<std::size_t>> buckets;
        for (const auto& [d, i] : by_offset) {
            if (buckets.empty() || d - bucket_offset.back() > tol.same_position_mm) {
                bucket_offset.push_back(d);
                buckets.push_back({});
            }
            buckets.back().push_back(i);
        }

        std::vector<const CineSlice*> member_ptrs;
        for (auto i : members) member_ptrs.push_back(&slices[i]);
        const double step = buckets.size() > 1 ? choose_step(member_ptrs, bucket_offset, tol) : 0.0;

        std::vector<std::size_t> cursor(buckets.size(), 0);
        for (std::size_t b = 0; b < buckets.size(); ++b) {
            while (cursor[b] < buckets[b].size()) {
                std::vector<std::size_t> run{buckets[b][cursor[b]++]};
                double cur = bucket_offset[b];
                std::size_t j = b + 1;
                while (step > 0) {
                    while (j < buckets.size() && bucket_offset[j] < cur + step * (1 - tol.gap_relative)) ++j;
                    std::size_t k = j;
                    while (k < buckets.size() && cursor[k] >= buckets[k].size() &&
                           gap_matches(bucket_offset[k] - cur, step, tol.gap_relative))
                        ++k;
                    if (k >= buckets.size() || !gap_matches(bucket_offset[k] - cur, step, tol.gap_relative)) break;
                    run.push_back(buckets[k][cursor[k]++]);
                    cur = bucket_offset[k];
                    j = k + 1;
                }
                ++diag.candidate_runs;
                if (static_cast<int>(run.size()) < kMinStackSlices) {
                    ++diag.discarded_runs;
                    diag.discarded_slices += static_cast<int>(run.size());
                    continue;
                }
                CineStack st;
                st.orientation = slices[run.front()].orientation;
                st.pixel_spacing = slices[run.front()].pixel_spacing;
                for (auto i : run) {
                    taken[i] = true;
                    st.offsets.push_back(dot(slices[i].position, n));
                    st.source_series.insert(slices[i].series_uid);
                    st.slices.push_back(std::move(slices[i]));
                }
                st.slice_gap = step;
                st.stack_id = make_stack_id(st);
                stacks.push_back(std::move(st));
            }
        }
    }
    std::sort(stacks.begin(), stacks.end(), [](const CineStack& a, const CineStack& b) { return a.stack_id < b.stack_id; });
    return stacks;
}

std::string validate_stack(const CineStack& s, const GroupingTolerances& tol) {
    if (s.slice_count() < kMinStackSlices) return "fewer than 6 slices";
    if (s.frame_count() < kMinCineFrames) return "fewer than 10 frames";
    if (s.offsets.size() != s.slices.size()) return "offset count does not match slice count";
    for (const auto& sl : s.slices) {
        if (static_cast<int>(sl.frames.size()) != s.frame_count()) return "frame counts differ between slices";
        if (!close_all(sl.orientation.data(), s.orientation.data(), 6, tol.orientation)) return "orientation differs";
        if (!close_all(sl.pixel_spacing.data(), s.pixel_spacing.data(), 2, tol.pixel_spacing_mm))
            return "pixel spacing differs";
    }
    if (!(s.slice_gap > 0)) return "slice gap must be positive";
    for (std::size_t i = 1; i < s.offsets.size(); ++i) {
        const double g = s.offsets[i] - s.offsets[i - 1];
        if (!(g > 0)) return "offsets are not strictly increasing";
        if (!gap_matches(g, s.slice_gap, tol.gap_relative)) return "non-uniform slice gap";
    }
    return {};
}

nlohmann::json stack_manifest(const std::vector<CineStack>& stacks) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : stacks) {
        nlohmann::json slices = nlohmann::json::array();
        for (std::size_t i = 0; i < s.slices.size(); ++i)
            slices.push_back({{"series_uid", s.slices[i].series_uid},
                              {"position", s.slices[i].position},
                              {"offset_mm", s.offsets[i]},
                              {"frames", s.slices[i].frames.size()}});
        out.push_back({{"stack_id", s.stack_id},
                       {"source_series", s.source_series},
                       {"orientation", s.orientation},
                       {"pixel_spacing", s.pixel_spacing},
                       {"slice_gap_mm", s.slice_gap},
                       {"rows", s.rows()},
                       {"cols", s.cols()},
                       {"slice_count", s.slice_count()},
                       {"frame_count", s.frame_count()},
                       {"slices", slices}});
    }
    return out;
}

}  // namespace svpipe

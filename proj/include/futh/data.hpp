#pragma once

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "futh/rng.hpp"
#include "futh/tensor.hpp"

namespace futh {

// ---------------------------------------------------------------------------
// ClipFile: magic "FUTH", version 1, dtype code, dims T,C,H,W (u32 LE),
// payload f32 LE row-major in [T,C,H,W] order, trailing label u32.
// ---------------------------------------------------------------------------

struct VideoClip {
    Tensor data;  // [T,C,H,W], the on-disk layout
    std::uint32_t label = 0;
};

namespace clipfile {

constexpr char kMagic[4] = {'F', 'U', 'T', 'H'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace clipfile

inline void write_clip(const std::string& path, const VideoClip& clip) {
    const Shape& s = clip.data.shape();
    if (s.size() != 4)
        throw InputError("write_clip: expected [T,C,H,W] data, got " + shape_str(s));
    std::string buf;
    buf.reserve(32 + static_cast<std::size_t>(clip.data.numel()) * 4);
    buf.append(clipfile::kMagic, 4);
    clipfile::put_u32_le(buf, clipfile::kVersion);
    clipfile::put_u32_le(buf, clipfile::kDtypeF32);
    for (int d = 0; d < 4; ++d) clipfile::put_u32_le(buf, static_cast<std::uint32_t>(s[d]));
    for (std::int64_t i = 0; i < clip.data.numel(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &clip.data[i], 4);
        clipfile::put_u32_le(buf, bits);
    }
    clipfile::put_u32_le(buf, clip.label);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("write_clip: cannot open '" + path + "' for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write_clip: short write to '" + path + "'");
}

inline VideoClip read_clip(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_clip: cannot open '" + path + "'");
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    const std::size_t n = raw.size();

    auto fail = [&](std::size_t offset, const std::string& what) {
        throw FormatError("'" + path + "' offset " + std::to_string(offset) + ": " + what);
    };
    if (n < 4 || std::memcmp(p, clipfile::kMagic, 4) != 0) fail(0, "bad magic (expected FUTH)");
    if (n < 8) fail(4, "truncated before version field");
    if (clipfile::get_u32_le(p + 4) != clipfile::kVersion)
        fail(4, "unsupported version " + std::to_string(clipfile::get_u32_le(p + 4)));
    if (n < 12) fail(8, "truncated before dtype field");
    if (clipfile::get_u32_le(p + 8) != clipfile::kDtypeF32)
        fail(8, "unsupported dtype code " + std::to_string(clipfile::get_u32_le(p + 8)));
    if (n < 28) fail(12, "truncated inside dims");
    std::int64_t dims[4];
    for (int d = 0; d < 4; ++d) {
        dims[d] = clipfile::get_u32_le(p + 12 + 4 * d);
        if (dims[d] == 0) fail(12 + 4 * static_cast<std::size_t>(d), "zero extent");
    }
    const std::size_t numel =
        static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
        static_cast<std::size_t>(dims[2]) * static_cast<std::size_t>(dims[3]);
    const std::size_t payload_end = 28 + numel * 4;
    if (n < payload_end)
        fail(n, "truncated payload (expected " + std::to_string(payload_end + 4) +
                    " bytes total, have " + std::to_string(n) + ")");
    if (n < payload_end + 4) fail(payload_end, "truncated before label field");
    if (n > payload_end + 4)
        fail(payload_end + 4, std::to_string(n - payload_end - 4) + " trailing bytes");

    VideoClip clip;
    clip.data = Tensor({dims[0], dims[1], dims[2], dims[3]});
    for (std::size_t i = 0; i < numel; ++i) {
        std::uint32_t bits = clipfile::get_u32_le(p + 28 + i * 4);
        std::memcpy(&clip.data[static_cast<std::int64_t>(i)], &bits, 4);
    }
    clip.label = clipfile::get_u32_le(p + payload_end);
    return clip;
}

// ---------------------------------------------------------------------------
// fixed-rate frame sampling: stride floor(T_raw/n), indices k*stride
// ---------------------------------------------------------------------------

inline std::vector<std::int64_t> sample_frames(std::int64_t t_raw, std::int64_t n) {
    if (n <= 0) throw InputError("sample_frames: n must be positive");
    if (n > t_raw)
        throw InputError("sample_frames: cannot take " + std::to_string(n) + " frames from " +
                         std::to_string(t_raw));
    const std::int64_t stride = t_raw / n;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) idx[static_cast<std::size_t>(k)] = k * stride;
    return idx;
}

// ---------------------------------------------------------------------------
// manifest: lines `path<TAB>class_index`, optional `# classes:`/`# split:`
// header comments; paths resolve relative to the manifest's directory
// ---------------------------------------------------------------------------

struct DatasetManifest {
    std::vector<std::pair<std::string, int>> entries;  // resolved path, class index
    std::vector<std::string> class_names;
    std::string split;
};

inline std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("read_manifest: cannot open '" + path + "'");
    const auto base = std::filesystem::path(path).parent_path();
    DatasetManifest m;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& what) {
        throw InputError("'" + path + "' line " + std::to_string(lineno) + ": " + what);
    };
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string classes_tag = "# classes:";
            const std::string split_tag = "# split:";
            if (line.rfind(classes_tag, 0) == 0)
                m.class_names = split_csv(line.substr(classes_tag.size()));
            else if (line.rfind(split_tag, 0) == 0) {
                std::string v = line.substr(split_tag.size());
                while (!v.empty() && v.front() == ' ') v.erase(v.begin());
                m.split = v;
            }
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) fail("expected `path<TAB>class_index`");
        const std::string rel = line.substr(0, tab);
        const std::string idx_str = line.substr(tab + 1);
        int cls = 0;
        try {
            std::size_t used = 0;
            cls = std::stoi(idx_str, &used);
            if (used != idx_str.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            fail("class index '" + idx_str + "' is not an integer");
        }
        if (cls < 0) fail("negative class index");
        const std::string resolved = (base / rel).string();
        for (const auto& e : m.entries)
            if (e.first == resolved) fail("duplicate path '" + rel + "'");
        m.entries.emplace_back(resolved, cls);
    }
    int max_cls = -1;
    for (const auto& e : m.entries) max_cls = std::max(max_cls, e.second);
    if (!m.class_names.empty() && max_cls >= static_cast<int>(m.class_names.size()))
        throw InputError("'" + path + "': class index " + std::to_string(max_cls) +
                         " exceeds declared class table of " +
                         std::to_string(m.class_names.size()));
    return m;
}

inline void write_manifest(const std::string& path, const std::vector<std::string>& rel_paths,
                           const std::vector<int>& labels,
                           const std::vector<std::string>& class_names, const std::string& split) {
    if (rel_paths.size() != labels.size())
        throw InputError("write_manifest: path/label count mismatch");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_manifest: cannot open '" + path + "'");
    if (!class_names.empty()) {
        f << "# classes: ";
        for (std::size_t i = 0; i < class_names.size(); ++i)
            f << (i ? "," : "") << class_names[i];
        f << "\n";
    }
    if (!split.empty()) f << "# split: " << split << "\n";
    for (std::size_t i = 0; i < rel_paths.size(); ++i)
        f << rel_paths[i] << "\t" << labels[i] << "\n";
    if (!f) throw IoError("write_manifest: short write to '" + path + "'");
}

// ---------------------------------------------------------------------------
// in-memory dataset (desk scale: clips load eagerly)
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<VideoClip> clips;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::string split;

    std::size_t size() const { return clips.size(); }

    int n_classes() const {
        if (!class_names.empty()) return static_cast<int>(class_names.size());
        int mx = -1;
        for (int l : labels) mx = std::max(mx, l);
        return mx + 1;
    }
};

inline Dataset load_dataset(const std::string& manifest_path) {
    const DatasetManifest m = read_manifest(manifest_path);
    if (m.entries.empty()) throw InputError("'" + manifest_path + "': empty manifest");
    Dataset ds;
    ds.class_names = m.class_names;
    ds.split = m.split;
    for (const auto& [path, cls] : m.entries) {
        VideoClip clip = read_clip(path);
        if (static_cast<int>(clip.label) != cls)
            throw InputError("'" + path + "': clip label " + std::to_string(clip.label) +
                             " disagrees with manifest class " + std::to_string(cls));
        ds.labels.push_back(cls);
        ds.clips.push_back(std::move(clip));
    }
    return ds;
}

// Assembles [B,C,n_frames,H,W] model input from dataset rows, applying the
// fixed-rate sampling rule when a clip is longer than n_frames.
inline std::pair<Tensor, std::vector<int>> make_batch(const Dataset& ds,
                                                      const std::vector<std::size_t>& rows,
                                                      std::int64_t n_frames) {
    if (rows.empty()) throw InputError("make_batch: empty row set");
    const Shape& s0 = ds.clips[rows[0]].data.shape();
    const std::int64_t C = s0[1], H = s0[2], W = s0[3];
    const std::int64_t B = static_cast<std::int64_t>(rows.size());
    Tensor batch({B, C, n_frames, H, W});
    std::vector<int> labels;
    labels.reserve(rows.size());
    const std::int64_t plane = H * W;
    for (std::int64_t b = 0; b < B; ++b) {
        const VideoClip& clip = ds.clips[rows[static_cast<std::size_t>(b)]];
        const Shape& s = clip.data.shape();
        if (s[1] != C || s[2] != H || s[3] != W)
            throw DimensionError("make_batch: clip " + std::to_string(rows[static_cast<std::size_t>(b)]) +
                                 " has shape " + shape_str(s) + ", expected [*," +
                                 std::to_string(C) + "," + std::to_string(H) + "," +
                                 std::to_string(W) + "]");
        const auto idx = sample_frames(s[0], n_frames);
        for (std::int64_t t = 0; t < n_frames; ++t) {
            const std::int64_t src_t = idx[static_cast<std::size_t>(t)];
            for (std::int64_t c = 0; c < C; ++c)
                std::memcpy(batch.data() + (((b * C + c) * n_frames + t) * plane),
                            clip.data.data() + ((src_t * C + c) * plane),
                            static_cast<std::size_t>(plane) * sizeof(float));
        }
        labels.push_back(ds.labels[rows[static_cast<std::size_t>(b)]]);
    }
    return {std::move(batch), std::move(labels)};
}

// Single-frame [B,C,1,H,W] batch for the appearance baseline. frame_pick < 0
// draws a fresh random frame per clip (training); otherwise that fixed index
// is used, clamped to the clip length.
inline std::pair<Tensor, std::vector<int>> make_frame_batch(const Dataset& ds,
                                                            const std::vector<std::size_t>& rows,
                                                            std::int64_t frame_pick, Rng* rng) {
    if (rows.empty()) throw InputError("make_frame_batch: empty row set");
    const Shape& s0 = ds.clips[rows[0]].data.shape();
    const std::int64_t C = s0[1], H = s0[2], W = s0[3];
    const std::int64_t B = static_cast<std::int64_t>(rows.size());
    Tensor batch({B, C, 1, H, W});
    std::vector<int> labels;
    labels.reserve(rows.size());
    const std::int64_t plane = H * W;
    for (std::int64_t b = 0; b < B; ++b) {
        const VideoClip& clip = ds.clips[rows[static_cast<std::size_t>(b)]];
        const std::int64_t Tn = clip.data.dim(0);
        std::int64_t t;
        if (frame_pick < 0) {
            if (!rng) throw StateError("make_frame_batch: random pick requires an rng stream");
            t = static_cast<std::int64_t>(rng->next_below(static_cast<std::uint64_t>(Tn)));
        } else {
            t = std::min(frame_pick, Tn - 1);
        }
        for (std::int64_t c = 0; c < C; ++c)
            std::memcpy(batch.data() + ((b * C + c) * plane),
                        clip.data.data() + ((t * C + c) * plane),
                        static_cast<std::size_t>(plane) * sizeof(float));
        labels.push_back(ds.labels[rows[static_cast<std::size_t>(b)]]);
    }
    return {std::move(batch), std::move(labels)};
}

// ---------------------------------------------------------------------------
// synthetic motion-direction task
// ---------------------------------------------------------------------------

// Classes are motion programs over a shared background-texture distribution:
// 0 up, 1 down, 2 left, 3 right. Appearance carries no class signal; only the
// patch trajectory separates the classes.
struct SyntheticSpec {
    std::int64_t frames = 16;
    std::int64_t channels = 3;
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t patch = 10;     // square patch side
    double speed = 2.0;          // pixels per frame
    double noise = 0.05;         // additive gaussian std
    bool reversal = false;       // reverse direction at the halfway frame

    static constexpr int kClasses = 4;

    void validate() const {
        if (frames < 1 || channels < 1 || height < 2 || width < 2)
            throw ConfigError("synthetic: degenerate clip extents");
        if (patch < 1 || patch > std::min(height, width))
            throw ConfigError("synthetic: patch must fit inside the frame");
        if (noise < 0) throw ConfigError("synthetic: negative noise level");
    }
};

inline const char* synthetic_class_name(int cls) {
    switch (cls) {
        case 0: return "up";
        case 1: return "down";
        case 2: return "left";
        case 3: return "right";
    }
    throw InputError("synthetic: class index " + std::to_string(cls) + " out of range");
}

inline VideoClip generate_synthetic_clip(const SyntheticSpec& spec, int cls, std::uint64_t seed) {
    spec.validate();
    if (cls < 0 || cls >= SyntheticSpec::kClasses)
        throw InputError("synthetic: class index " + std::to_string(cls) + " out of range");
    Rng rng(seed);

    const std::int64_t T = spec.frames, C = spec.channels, H = spec.height, W = spec.width;
    const std::int64_t P = spec.patch;

    // Dark background, solid bright patch. The patch is salient in every
    // frame, but its position marginal is uniform for every class (start
    // uniform, wrap-around motion), so single-frame appearance stays
    // class-blind: only the trajectory separates the classes.
    Tensor background({C, H, W});
    background.fill(0.0f);
    Tensor patch({C, P, P});
    patch.fill(1.0f);

    const auto y0 = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(H)));
    const auto x0 = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(W)));

    double dy = 0.0, dx = 0.0;
    switch (cls) {
        case 0: dy = -spec.speed; break;
        case 1: dy = spec.speed; break;
        case 2: dx = -spec.speed; break;
        case 3: dx = spec.speed; break;
    }

    VideoClip clip;
    clip.label = static_cast<std::uint32_t>(cls);
    clip.data = Tensor({T, C, H, W});
    const std::int64_t plane = H * W;
    double py = static_cast<double>(y0), px = static_cast<double>(x0);
    for (std::int64_t t = 0; t < T; ++t) {
        if (spec.reversal && t == T / 2) {
            dy = -dy;
            dx = -dx;
        }
        float* frame = clip.data.data() + t * C * plane;
        std::memcpy(frame, background.data(), static_cast<std::size_t>(C * plane) * sizeof(float));
        const auto top = static_cast<std::int64_t>(std::llround(py));
        const auto left = static_cast<std::int64_t>(std::llround(px));
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t r = 0; r < P; ++r) {
                const std::int64_t yy = ((top + r) % H + H) % H;
                for (std::int64_t q = 0; q < P; ++q) {
                    const std::int64_t xx = ((left + q) % W + W) % W;
                    frame[c * plane + yy * W + xx] = patch[(c * P + r) * P + q];
                }
            }
        py += dy;
        px += dx;
    }
    if (spec.noise > 0.0)
        for (std::int64_t i = 0; i < clip.data.numel(); ++i)
            clip.data[i] += static_cast<float>(spec.noise * rng.normal());
    return clip;
}

// Writes `count` balanced clips plus a manifest into out_dir; file names are
// `<split>_NNNN.clip`, classes assigned round-robin.
inline std::string generate_synthetic_dataset(const SyntheticSpec& spec, const std::string& out_dir,
                                              const std::string& split, std::int64_t count,
                                              std::uint64_t seed) {
    spec.validate();
    if (count < 1) throw InputError("synthetic: clip count must be positive");
    std::filesystem::create_directories(out_dir);
    Rng base(seed);
    Rng split_rng = base.child(std::hash<std::string>{}(split));
    std::vector<std::string> rels;
    std::vector<int> labels;
    for (std::int64_t i = 0; i < count; ++i) {
        const int cls = static_cast<int>(i % SyntheticSpec::kClasses);
        const std::uint64_t clip_seed = split_rng.child(static_cast<std::uint64_t>(i)).seed();
        VideoClip clip = generate_synthetic_clip(spec, cls, clip_seed);
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04lld.clip", split.c_str(),
                      static_cast<long long>(i));
        write_clip((std::filesystem::path(out_dir) / name).string(), clip);
        rels.emplace_back(name);
        labels.push_back(cls);
    }
    std::vector<std::string> names;
    for (int k = 0; k < SyntheticSpec::kClasses; ++k) names.emplace_back(synthetic_class_name(k));
    const std::string manifest = (std::filesystem::path(out_dir) / (split + ".manifest")).string();
    write_manifest(manifest, rels, labels, names, split);
    return manifest;
}

}  // namespace futh

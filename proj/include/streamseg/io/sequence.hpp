#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "streamseg/errors.hpp"
#include "streamseg/geometry.hpp"
#include "streamseg/io/png_io.hpp"
#include "streamseg/superpoint.hpp"

namespace streamseg {

// Frame directory layout:
//   intrinsics.txt                 fx fy cx cy width height depth_scale
//   pose_%05d.txt                  4x4 camera-to-world, row major
//   depth_%05d.png                 16-bit grayscale, 0 = invalid
//   mask_%05d.png                  16-bit ids, 65535 = unmasked
//   feat_%05d.bin   (optional)     u32 N, u32 C, then N*C little-endian f32
//   sem_%05d.txt    (optional)     "mask_id category" per line
//   gt_%05d.txt     (optional)     "mask_id instance_id" per line

struct SequenceFrame {
    int index = 0;
    DepthImage depth;
    MaskImage mask;
    Pose pose;
    std::optional<MatrixXd> point_features;  // one row per valid depth pixel
    std::vector<int> mask_category;          // per mask id, -1 unknown
    std::vector<std::int64_t> mask_instance;  // ground truth, -1 unknown
};

namespace detail {

inline std::string frame_file(const std::string& dir, const char* prefix, int index,
                              const char* ext) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05d%s", prefix, index, ext);
    return dir + "/" + name;
}

inline std::vector<double> read_numbers(const std::string& path, int expected) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, "cannot open");
    std::vector<double> vals;
    double x;
    while (in >> x) vals.push_back(x);
    if (!in.eof()) {
        in.clear();
        throw ParseError(path, "invalid number", static_cast<long>(in.tellg()));
    }
    if (expected >= 0 && static_cast<int>(vals.size()) != expected)
        throw ParseError(path, "expected " + std::to_string(expected) + " numbers, got " +
                                   std::to_string(vals.size()));
    return vals;
}

// "id value" pairs into a dense vector; ids outside [0, num_masks) rejected.
template <typename T>
std::vector<T> read_id_table(const std::string& path, int num_masks, T missing) {
    std::vector<double> vals = read_numbers(path, -1);
    if (vals.size() % 2 != 0) throw ParseError(path, "expected id/value pairs");
    std::vector<T> table(num_masks, missing);
    for (std::size_t i = 0; i < vals.size(); i += 2) {
        int id = static_cast<int>(vals[i]);
        if (id < 0 || id >= num_masks)
            throw ParseError(path, "mask id " + std::to_string(id) + " out of range");
        table[id] = static_cast<T>(vals[i + 1]);
    }
    return table;
}

inline int count_valid(const DepthImage& depth) {
    int n = 0;
    for (std::uint16_t d : depth.data) n += d > 0;
    return n;
}

}  // namespace detail

class SequenceReader {
  public:
    explicit SequenceReader(const std::string& dir) : dir_(dir) {
        namespace fs = std::filesystem;
        if (!fs::is_directory(dir_)) throw ParseError(dir_, "not a directory");
        for (const auto& entry : fs::directory_iterator(dir_)) {
            std::string name = entry.path().filename().string();
            if (name.rfind("pose_", 0) != 0 || entry.path().extension() != ".txt") continue;
            std::string digits = name.substr(5, name.size() - 5 - 4);
            if (digits.empty() ||
                digits.find_first_not_of("0123456789") != std::string::npos)
                continue;
            indices_.push_back(std::stoi(digits));
        }
        std::sort(indices_.begin(), indices_.end());
        for (std::size_t i = 0; i < indices_.size(); ++i)
            if (indices_[i] != indices_[0] + static_cast<int>(i))
                throw ParseError(dir_, "gap in frame numbering: missing frame index " +
                                           std::to_string(indices_[0] + static_cast<int>(i)));

        std::string intr_path = dir_ + "/intrinsics.txt";
        if (fs::exists(intr_path)) {
            std::vector<double> v = detail::read_numbers(intr_path, 7);
            intr_ = CameraIntrinsics{v[0], v[1], v[2], v[3], static_cast<int>(v[4]),
                                     static_cast<int>(v[5])};
            intr_.validate();
            depth_scale_ = v[6];
            if (depth_scale_ <= 0.0) throw ParseError(intr_path, "depth_scale must be positive");
            has_intrinsics_ = true;
        } else if (!indices_.empty()) {
            throw ParseError(intr_path, "missing");
        }
    }

    int size() const { return static_cast<int>(indices_.size()); }
    int frame_index(int position) const { return indices_.at(position); }
    const std::string& dir() const { return dir_; }
    double depth_scale() const { return depth_scale_; }

    const CameraIntrinsics& intrinsics() const {
        if (!has_intrinsics_) throw ConfigError("sequence has no intrinsics: " + dir_);
        return intr_;
    }

    // Just the semantic table of one frame; cheap, for category prescans.
    std::vector<int> read_semantic(int position, int num_masks) const {
        std::string path = detail::frame_file(dir_, "sem", frame_index(position), ".txt");
        if (!std::filesystem::exists(path)) return {};
        return detail::read_id_table<int>(path, num_masks, -1);
    }

    SequenceFrame read(int position) const {
        namespace fs = std::filesystem;
        SequenceFrame frame;
        frame.index = frame_index(position);

        int w = 0, h = 0;
        std::string depth_path = detail::frame_file(dir_, "depth", frame.index, ".png");
        frame.depth.data = read_png16(depth_path, w, h);
        frame.depth.width = w;
        frame.depth.height = h;
        frame.depth.depth_scale = depth_scale_;
        if (w != intrinsics().width || h != intrinsics().height)
            throw ConfigError(depth_path + ": dimensions do not match intrinsics");

        std::string mask_path = detail::frame_file(dir_, "mask", frame.index, ".png");
        int mw = 0, mh = 0;
        std::vector<std::uint16_t> raw = read_png16(mask_path, mw, mh);
        if (mw != w || mh != h)
            throw ConfigError(mask_path + ": dimensions do not match depth");
        frame.mask = MaskImage(w, h);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (raw[i] == 65535) continue;
            frame.mask.labels[i] = raw[i];
            frame.mask.num_masks = std::max(frame.mask.num_masks, raw[i] + 1);
        }

        std::string pose_path = detail::frame_file(dir_, "pose", frame.index, ".txt");
        std::vector<double> m = detail::read_numbers(pose_path, 16);
        for (int i = 0; i < 4; ++i) {
            double expect = i == 3 ? 1.0 : 0.0;
            if (std::abs(m[12 + i] - expect) > 1e-9)
                throw ParseError(pose_path, "bottom row must be 0 0 0 1");
        }
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) frame.pose.rotation(r, c) = m[4 * r + c];
            frame.pose.translation(r) = m[4 * r + 3];
        }
        try {
            frame.pose.validate();
        } catch (const ConfigError& e) {
            throw ParseError(pose_path, e.what());
        }

        std::string feat_path = detail::frame_file(dir_, "feat", frame.index, ".bin");
        if (fs::exists(feat_path)) frame.point_features = read_features(feat_path, frame.depth);

        frame.mask_category = read_semantic(position, frame.mask.num_masks);

        std::string gt_path = detail::frame_file(dir_, "gt", frame.index, ".txt");
        if (fs::exists(gt_path))
            frame.mask_instance = detail::read_id_table<std::int64_t>(
                gt_path, frame.mask.num_masks, std::int64_t{-1});
        return frame;
    }

  private:
    static MatrixXd read_features(const std::string& path, const DepthImage& depth) {
        std::FILE* fp = std::fopen(path.c_str(), "rb");
        if (!fp) throw ParseError(path, "cannot open");
        std::uint32_t header[2];
        if (std::fread(header, sizeof(std::uint32_t), 2, fp) != 2) {
            std::fclose(fp);
            throw ParseError(path, "truncated header", 0);
        }
        const std::size_t n = header[0], c = header[1];
        if (n != static_cast<std::size_t>(detail::count_valid(depth))) {
            std::fclose(fp);
            throw ConfigError(path + ": feature rows do not match valid depth pixels");
        }
        std::vector<float> buf(n * c);
        if (std::fread(buf.data(), sizeof(float), buf.size(), fp) != buf.size()) {
            std::fclose(fp);
            throw ParseError(path, "truncated payload", 8);
        }
        std::fclose(fp);
        MatrixXd feats(n, c);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j)
                feats(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    buf[i * c + j];
        return feats;
    }

    std::string dir_;
    std::vector<int> indices_;
    CameraIntrinsics intr_{};
    double depth_scale_ = 0.001;
    bool has_intrinsics_ = false;
};

class SequenceWriter {
  public:
    SequenceWriter(const std::string& dir, const CameraIntrinsics& intr,
                   double depth_scale = 0.001)
        : dir_(dir) {
        intr.validate();
        if (depth_scale <= 0.0) throw ConfigError("sequence writer: depth_scale must be > 0");
        std::filesystem::create_directories(dir_);
        std::ofstream out(dir_ + "/intrinsics.txt");
        if (!out) throw ParseError(dir_ + "/intrinsics.txt", "cannot open for writing");
        char line[256];
        std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %d %d %.17g\n", intr.fx,
                      intr.fy, intr.cx, intr.cy, intr.width, intr.height, depth_scale);
        out << line;
    }

    void write(int index, const DepthImage& depth, const MaskImage& mask, const Pose& pose,
               const MatrixXd* point_features = nullptr,
               const std::vector<int>* mask_category = nullptr,
               const std::vector<std::int64_t>* mask_instance = nullptr) const {
        write_png16(detail::frame_file(dir_, "depth", index, ".png"), depth.width, depth.height,
                    depth.data);

        std::vector<std::uint16_t> raw(mask.labels.size());
        for (std::size_t i = 0; i < raw.size(); ++i) {
            std::int32_t id = mask.labels[i];
            if (id >= 65535) throw ConfigError("sequence writer: mask id 65535 is reserved");
            raw[i] = id < 0 ? 65535 : static_cast<std::uint16_t>(id);
        }
        write_png16(detail::frame_file(dir_, "mask", index, ".png"), mask.width, mask.height,
                    raw);

        std::string pose_path = detail::frame_file(dir_, "pose", index, ".txt");
        std::ofstream out(pose_path);
        if (!out) throw ParseError(pose_path, "cannot open for writing");
        char line[256];
        for (int r = 0; r < 4; ++r) {
            double row[4];
            for (int c = 0; c < 4; ++c) {
                if (r == 3)
                    row[c] = c == 3 ? 1.0 : 0.0;
                else
                    row[c] = c == 3 ? pose.translation(r) : pose.rotation(r, c);
            }
            std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g\n", row[0], row[1],
                          row[2], row[3]);
            out << line;
        }

        if (point_features) write_features(index, *point_features);
        if (mask_category) write_id_table("sem", index, *mask_category);
        if (mask_instance) write_id_table("gt", index, *mask_instance);
    }

  private:
    void write_features(int index, const MatrixXd& feats) const {
        std::string path = detail::frame_file(dir_, "feat", index, ".bin");
        std::FILE* fp = std::fopen(path.c_str(), "wb");
        if (!fp) throw ParseError(path, "cannot open for writing");
        std::uint32_t header[2] = {static_cast<std::uint32_t>(feats.rows()),
                                   static_cast<std::uint32_t>(feats.cols())};
        std::fwrite(header, sizeof(std::uint32_t), 2, fp);
        std::vector<float> buf(static_cast<std::size_t>(feats.rows()) * feats.cols());
        for (Eigen::Index i = 0; i < feats.rows(); ++i)
            for (Eigen::Index j = 0; j < feats.cols(); ++j)
                buf[static_cast<std::size_t>(i) * feats.cols() + j] =
                    static_cast<float>(feats(i, j));
        std::fwrite(buf.data(), sizeof(float), buf.size(), fp);
        std::fclose(fp);
    }

    template <typename T>
    void write_id_table(const char* prefix, int index, const std::vector<T>& table) const {
        std::string path = detail::frame_file(dir_, prefix, index, ".txt");
        std::ofstream out(path);
        if (!out) throw ParseError(path, "cannot open for writing");
        for (std::size_t id = 0; id < table.size(); ++id)
            if (table[id] >= 0) out << id << " " << table[id] << "\n";
    }

    std::string dir_;
};

}  // namespace streamseg

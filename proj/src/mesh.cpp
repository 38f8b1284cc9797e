// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "orbitalsplat/mesh.hpp"

#include "orbitalsplat/error.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

namespace orbitalsplat {

Vec3 Mesh::face_normal(std::size_t tri) const {
    const auto &c = triangles[tri].corners;
    const Vec3 &a = vertices[static_cast<std::size_t>(c[0].v)];
    const Vec3 &b = vertices[static_cast<std::size_t>(c[1].v)];
    const Vec3 &d = vertices[static_cast<std::size_t>(c[2].v)];
    const Vec3 n = (b - a).cross(d - a);
    const double len = n.norm();
    return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

double Mesh::triangle_area(std::size_t tri) const {
    const auto &c = triangles[tri].corners;
    const Vec3 &a = vertices[static_cast<std::size_t>(c[0].v)];
    const Vec3 &b = vertices[static_cast<std::size_t>(c[1].v)];
    const Vec3 &d = vertices[static_cast<std::size_t>(c[2].v)];
    return 0.5 * (b - a).cross(d - a).norm();
}

void Mesh::validate() const {
    const auto in_range = [](int idx, std::size_t n, bool optional) {
        return (optional && idx == -1) || (idx >= 0 && static_cast<std::size_t>(idx) < n);
    };
    for (const auto &t : triangles) {
        for (const auto &c : t.corners) {
            if (!in_range(c.v, vertices.size(), false) || !in_range(c.vt, uvs.size(), true) ||
                !in_range(c.vn, normals.size(), true)) {
                throw InvalidArgument("mesh triangle references an index out of range");
            }
        }
    }
}

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) {
            ++i;
        }
        const std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t') {
            ++i;
        }
        if (i > start) {
            out.push_back(s.substr(start, i - start));
        }
    }
    return out;
}

bool parse_double(std::string_view token, double &out) {
    const char *end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_int(std::string_view token, int &out) {
    const char *end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, out);
    return ec == std::errc() && ptr == end;
}

/// Joins tokens [first, end) back into one string (file names may contain spaces).
std::string join_tail(const std::vector<std::string_view> &tokens, std::size_t first) {
    std::string out;
    for (std::size_t i = first; i < tokens.size(); ++i) {
        if (!out.empty()) {
            out += ' ';
        }
        out += tokens[i];
    }
    return out;
}

class ObjParser {
  public:
    explicit ObjParser(const MaterialResolver &resolver) : resolver_(resolver) {}

    ObjParseResult run(std::istream &in) {
        std::string line;
        while (std::getline(in, line)) {
            ++line_no_;
            handle_line(trim(line));
        }
        result_.mesh.validate();
        return std::move(result_);
    }

  private:
    void handle_line(std::string_view line) {
        if (line.empty() || line.front() == '#') {
            return;
        }
        const auto tokens = split_ws(line);
        const std::string_view dir = tokens.front();
        if (dir == "v") {
            result_.mesh.vertices.push_back(read_vec3(tokens, "v"));
        } else if (dir == "vn") {
            const Vec3 n = read_vec3(tokens, "vn");
            const double len = n.norm();
            result_.mesh.normals.push_back(len > 0.0 ? Vec3(n / len) : Vec3::UnitZ());
        } else if (dir == "vt") {
            if (tokens.size() < 2) {
                fail("vt", "expected at least one texture coordinate");
            }
            double u = 0.0;
            double v = 0.0;
            if (!parse_double(tokens[1], u) || (tokens.size() > 2 && !parse_double(tokens[2], v))) {
                fail("vt", "non-numeric texture coordinate");
            }
            result_.mesh.uvs.emplace_back(u, v);
        } else if (dir == "f") {
            read_face(tokens);
        } else if (dir == "usemtl") {
            if (tokens.size() < 2) {
                fail("usemtl", "missing material name");
            }
            current_material_ = material_index(join_tail(tokens, 1));
        } else if (dir == "mtllib") {
            if (tokens.size() < 2) {
                fail("mtllib", "missing library name");
            }
            load_library(join_tail(tokens, 1));
        } else if (dir == "o" || dir == "g" || dir == "s") {
            // Recognized; grouping and smoothing are not represented.
        } else {
            ++result_.unknown_directives;
            if (result_.warnings.size() < 64) {
                result_.warnings.push_back("line " + std::to_string(line_no_) +
                                           ": ignored directive '" + std::string(dir) + "'");
            }
        }
    }

    [[noreturn]] void fail(std::string_view directive, const std::string &what) const {
        throw ParseError(line_no_, std::string(directive), what);
    }

    Vec3 read_vec3(const std::vector<std::string_view> &tokens, std::string_view directive) const {
        if (tokens.size() < 4) {
            fail(directive, "expected three coordinates");
        }
        Vec3 out;
        for (int i = 0; i < 3; ++i) {
            if (!parse_double(tokens[static_cast<std::size_t>(i) + 1], out[i])) {
                fail(directive, "non-numeric coordinate '" +
                                    std::string(tokens[static_cast<std::size_t>(i) + 1]) + "'");
            }
        }
        return out;
    }

    int resolve_index(std::string_view token, std::size_t count, const char *kind) const {
        int raw = 0;
        if (!parse_int(token, raw) || raw == 0) {
            fail("f", std::string("bad ") + kind + " index '" + std::string(token) + "'");
        }
        const long long resolved = raw > 0 ? raw - 1LL : static_cast<long long>(count) + raw;
        if (resolved < 0 || resolved >= static_cast<long long>(count)) {
            throw IndexOutOfRange(line_no_, "f",
                                  std::string(kind) + " index " + std::to_string(raw) +
                                      " out of range (" + std::to_string(count) + " defined)");
        }
        return static_cast<int>(resolved);
    }

    Corner read_corner(std::string_view token) const {
        Corner c;
        const auto s1 = token.find('/');
        if (s1 == std::string_view::npos) {
            c.v = resolve_index(token, result_.mesh.vertices.size(), "vertex");
            return c;
        }
        c.v = resolve_index(token.substr(0, s1), result_.mesh.vertices.size(), "vertex");
        const auto rest = token.substr(s1 + 1);
        const auto s2 = rest.find('/');
        const auto vt = rest.substr(0, s2);
        if (!vt.empty()) {
            c.vt = resolve_index(vt, result_.mesh.uvs.size(), "texcoord");
        }
        if (s2 != std::string_view::npos) {
            const auto vn = rest.substr(s2 + 1);
            if (!vn.empty()) {
                c.vn = resolve_index(vn, result_.mesh.normals.size(), "normal");
            }
        }
        return c;
    }

    void read_face(const std::vector<std::string_view> &tokens) {
        if (tokens.size() < 4) {
            fail("f", "a face needs at least three corners");
        }
        std::vector<Corner> corners;
        corners.reserve(tokens.size() - 1);
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            corners.push_back(read_corner(tokens[i]));
        }
        for (std::size_t i = 1; i + 1 < corners.size(); ++i) {
            Triangle t;
            t.corners = {corners[0], corners[i], corners[i + 1]};
            t.material = current_material_;
            t.face = face_count_;
            result_.mesh.triangles.push_back(t);
        }
        ++face_count_;
    }

    int material_index(const std::string &name) {
        auto it = material_lookup_.find(name);
        if (it != material_lookup_.end()) {
            return it->second;
        }
        result_.warnings.push_back("line " + std::to_string(line_no_) + ": material '" + name +
                                   "' not defined, using fallback gray");
        Material fallback;
        fallback.name = name;
        fallback.diffuse_rgb = kFallbackGray;
        return add_material(std::move(fallback));
    }

    int add_material(Material m) {
        const int idx = static_cast<int>(result_.materials.size());
        material_lookup_[m.name] = idx;
        result_.materials.push_back(std::move(m));
        return idx;
    }

    void load_library(const std::string &name) {
        std::optional<std::string> text;
        if (resolver_.read_text) {
            try {
                text = resolver_.read_text(name);
            } catch (const std::exception &e) {
                result_.warnings.push_back("mtllib '" + name + "': " + e.what());
            }
        }
        if (!text) {
            result_.warnings.push_back("line " + std::to_string(line_no_) +
                                       ": unreadable material library '" + name + "'");
            return;
        }
        std::istringstream mtl(*text);
        try {
            for (auto &m : parse_mtl(mtl, resolver_, result_.warnings)) {
                if (!material_lookup_.contains(m.name)) {
                    add_material(std::move(m));
                }
            }
        } catch (const ParseError &e) {
            result_.warnings.push_back("mtllib '" + name + "' " + e.what());
        }
    }

    const MaterialResolver &resolver_;
    ObjParseResult result_;
    std::unordered_map<std::string, int> material_lookup_;
    std::size_t line_no_ = 0;
    int current_material_ = -1;
    int face_count_ = 0;
};

} // namespace

std::vector<Material> parse_mtl(std::istream &in, const MaterialResolver &resolver,
                                std::vector<std::string> &warnings) {
    std::vector<Material> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') {
            continue;
        }
        const auto tokens = split_ws(t);
        const auto dir = tokens.front();
        if (dir == "newmtl") {
            if (tokens.size() < 2) {
                throw ParseError(line_no, "newmtl", "missing material name");
            }
            Material m;
            m.name = join_tail(tokens, 1);
            out.push_back(std::move(m));
            continue;
        }
        if (out.empty()) {
            continue;
        }
        Material &m = out.back();
        if (dir == "Kd") {
            if (tokens.size() < 4) {
                throw ParseError(line_no, "Kd", "expected three components");
            }
            for (int i = 0; i < 3; ++i) {
                double v = 0.0;
                if (!parse_double(tokens[static_cast<std::size_t>(i) + 1], v)) {
                    throw ParseError(line_no, "Kd", "non-numeric component");
                }
                m.diffuse_rgb[i] = std::clamp(v, 0.0, 1.0);
            }
        } else if (dir == "map_Kd" && tokens.size() >= 2) {
            // Options such as -s / -o precede the file name, which is the last token.
            const std::string path(tokens.back());
            m.texture_path = path;
            if (resolver.load_texture) {
                try {
                    m.diffuse_texture = resolver.load_texture(path);
                } catch (const std::exception &e) {
                    warnings.push_back("texture '" + path + "': " + e.what());
                }
            }
            if (!m.diffuse_texture) {
                warnings.push_back("material '" + m.name + "': unreadable texture '" + path + "'");
            }
        }
    }
    return out;
}

MaterialResolver filesystem_resolver(const std::filesystem::path &base_dir) {
    MaterialResolver r;
    r.read_text = [base_dir](const std::string &name) -> std::optional<std::string> {
        std::ifstream f(base_dir / name, std::ios::binary);
        if (!f) {
            return std::nullopt;
        }
        return std::string(std::istreambuf_iterator<char>(f), {});
    };
    r.load_texture = [base_dir](const std::string &name) -> std::shared_ptr<const TextureImage> {
        return std::make_shared<const TextureImage>(load_texture_file(base_dir / name));
    };
    return r;
}

ObjParseResult parse_obj(std::istream &in, const MaterialResolver &resolver) {
    ObjParser parser(resolver);
    return parser.run(in);
}

ObjParseResult load_obj(const std::filesystem::path &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open OBJ '" + path.string() + "'");
    }
    return parse_obj(f, filesystem_resolver(path.parent_path()));
}

NormalizedMesh normalize_to_unit_sphere(const Mesh &mesh) {
    if (mesh.vertices.empty()) {
        throw EmptyInput("normalize_to_unit_sphere: mesh has no vertices");
    }
    Vec3 lo = mesh.vertices.front();
    Vec3 hi = lo;
    for (const auto &v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    const Vec3 center = 0.5 * (lo + hi);
    double max_norm = 0.0;
    for (const auto &v : mesh.vertices) {
        max_norm = std::max(max_norm, (v - center).norm());
    }
    if (!(max_norm > 0.0)) {
        throw InvalidArgument("normalize_to_unit_sphere: all vertices coincide");
    }
    NormalizedMesh out{mesh, center, 1.0 / max_norm};
    for (auto &v : out.mesh.vertices) {
        v = (v - center) * out.scale;
    }
    std::vector<Triangle> kept;
    kept.reserve(out.mesh.triangles.size());
    for (std::size_t i = 0; i < out.mesh.triangles.size(); ++i) {
        if (out.mesh.triangle_area(i) > 1e-12) {
            kept.push_back(out.mesh.triangles[i]);
        }
    }
    out.mesh.triangles = std::move(kept);
    return out;
}

Mesh compute_vertex_normals(const Mesh &mesh) {
    Mesh out = mesh;
    const std::size_t nv = mesh.vertices.size();
    std::vector<Vec3> accum(nv, Vec3::Zero());

    // Area-weighted normal of each source polygon (sum of its triangles' cross products).
    std::unordered_map<long long, Vec3> face_sum;
    const auto face_key = [](const Triangle &t, std::size_t idx) {
        return t.face >= 0 ? static_cast<long long>(t.face) : -1 - static_cast<long long>(idx);
    };
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto &c = mesh.triangles[i].corners;
        const Vec3 &a = mesh.vertices[static_cast<std::size_t>(c[0].v)];
        const Vec3 &b = mesh.vertices[static_cast<std::size_t>(c[1].v)];
        const Vec3 &d = mesh.vertices[static_cast<std::size_t>(c[2].v)];
        auto [it, inserted] = face_sum.try_emplace(face_key(mesh.triangles[i], i), Vec3::Zero());
        it->second += (b - a).cross(d - a);
    }
    std::unordered_set<unsigned long long> applied;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        const long long key = face_key(mesh.triangles[i], i);
        const Vec3 &n = face_sum.at(key);
        for (const auto &c : mesh.triangles[i].corners) {
            const unsigned long long pair =
                (static_cast<unsigned long long>(key) << 32) ^ static_cast<unsigned>(c.v);
            if (applied.insert(pair).second) {
                accum[static_cast<std::size_t>(c.v)] += n;
            }
        }
    }
    out.normals.resize(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        const double len = accum[i].norm();
        out.normals[i] = len > 0.0 ? Vec3(accum[i] / len) : Vec3::UnitZ();
    }
    for (auto &t : out.triangles) {
        for (auto &c : t.corners) {
            c.vn = c.v;
        }
    }
    return out;
}

void write_obj(std::ostream &out, const Mesh &mesh, const std::vector<Material> &materials,
               const std::string &mtl_name) {
    char buf[128];
    if (!mtl_name.empty()) {
        out << "mtllib " << mtl_name << '\n';
    }
    for (const auto &v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
        out << buf;
    }
    for (const auto &t : mesh.uvs) {
        std::snprintf(buf, sizeof(buf), "vt %.9g %.9g\n", t.x(), t.y());
        out << buf;
    }
    for (const auto &n : mesh.normals) {
        std::snprintf(buf, sizeof(buf), "vn %.9g %.9g %.9g\n", n.x(), n.y(), n.z());
        out << buf;
    }
    int current = -2;
    for (const auto &t : mesh.triangles) {
        if (!mtl_name.empty() && t.material != current && t.material >= 0 &&
            static_cast<std::size_t>(t.material) < materials.size()) {
            out << "usemtl " << materials[static_cast<std::size_t>(t.material)].name << '\n';
            current = t.material;
        }
        out << 'f';
        for (const auto &c : t.corners) {
            out << ' ' << c.v + 1;
            if (c.vt >= 0 || c.vn >= 0) {
                out << '/';
                if (c.vt >= 0) {
                    out << c.vt + 1;
                }
                if (c.vn >= 0) {
                    out << '/' << c.vn + 1;
                }
            }
        }
        out << '\n';
    }
}

void write_mtl(std::ostream &out, const std::vector<Material> &materials) {
    char buf[128];
    for (const auto &m : materials) {
        out << "newmtl " << m.name << '\n';
        std::snprintf(buf, sizeof(buf), "Kd %.9g %.9g %.9g\n", m.diffuse_rgb.x(),
                      m.diffuse_rgb.y(), m.diffuse_rgb.z());
        out << buf;
        if (!m.texture_path.empty()) {
            out << "map_Kd " << m.texture_path << '\n';
        }
        out << '\n';
    }
}

void save_obj(const std::filesystem::path &dir, const std::string &stem, const Mesh &mesh,
              const std::vector<Material> &materials) {
    std::filesystem::create_directories(dir);
    std::vector<Material> written = materials;
    for (std::size_t i = 0; i < written.size(); ++i) {
        auto &m = written[i];
        if (m.diffuse_texture) {
            if (m.texture_path.empty()) {
                m.texture_path = stem + "_" + std::to_string(i) + ".png";
            }
            write_png(*m.diffuse_texture, dir / m.texture_path);
        }
    }
    const std::string mtl_name = stem + ".mtl";
    {
        std::ofstream mtl(dir / mtl_name);
        if (!mtl) {
            throw IoError("cannot write '" + (dir / mtl_name).string() + "'");
        }
        write_mtl(mtl, written);
    }
    std::ofstream obj(dir / (stem + ".obj"));
    if (!obj) {
        throw IoError("cannot write '" + (dir / (stem + ".obj")).string() + "'");
    }
    write_obj(obj, mesh, written, mtl_name);
}

TextureImage decode_tga(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 18) {
        throw IoError("TGA: truncated header");
    }
    const std::uint8_t id_length = bytes[0];
    const std::uint8_t cmap_type = bytes[1];
    const std::uint8_t image_type = bytes[2];
    const int width = bytes[12] | (bytes[13] << 8);
    const int height = bytes[14] | (bytes[15] << 8);
    const int bpp = bytes[16];
    const bool top_origin = (bytes[17] & 0x20) != 0;
    if (cmap_type != 0) {
        throw IoError("TGA: color-mapped images are not supported");
    }
    const bool rle = image_type == 10 || image_type == 11;
    const bool gray = image_type == 3 || image_type == 11;
    if (image_type != 2 && image_type != 3 && !rle) {
        throw IoError("TGA: unsupported image type " + std::to_string(image_type));
    }
    const int channels = bpp / 8;
    if ((gray && bpp != 8) || (!gray && bpp != 24 && bpp != 32)) {
        throw IoError("TGA: unsupported pixel depth " + std::to_string(bpp));
    }
    if (width <= 0 || height <= 0) {
        throw IoError("TGA: empty image");
    }

    const std::size_t count = static_cast<std::size_t>(width) * height;
    std::vector<std::uint8_t> raw(count * static_cast<std::size_t>(channels));
    std::size_t pos = 18 + id_length;
    const auto need = [&](std::size_t n) {
        if (pos + n > bytes.size()) {
            throw IoError("TGA: truncated pixel data");
        }
    };
    if (!rle) {
        need(raw.size());
        std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), raw.size(), raw.begin());
    } else {
        std::size_t px = 0;
        while (px < count) {
            need(1);
            const std::uint8_t header = bytes[pos++];
            const std::size_t run = (header & 0x7f) + 1u;
            if (px + run > count) {
                throw IoError("TGA: RLE packet overruns image");
            }
            const auto ch = static_cast<std::size_t>(channels);
            if (header & 0x80) {
                need(ch);
                for (std::size_t k = 0; k < run; ++k) {
                    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), ch,
                                raw.begin() + static_cast<std::ptrdiff_t>((px + k) * ch));
                }
                pos += ch;
            } else {
                need(run * ch);
                std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), run * ch,
                            raw.begin() + static_cast<std::ptrdiff_t>(px * ch));
                pos += run * ch;
            }
            px += run;
        }
    }

    TextureImage img(width, height);
    for (int y = 0; y < height; ++y) {
        const int src_row = top_origin ? y : height - 1 - y;
        for (int x = 0; x < width; ++x) {
            const std::uint8_t *p =
                raw.data() + (static_cast<std::size_t>(src_row) * width + x) * channels;
            if (gray) {
                img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = p[0] / 255.0;
                img.at(x, y, 3) = 1.0;
            } else {
                img.at(x, y, 0) = p[2] / 255.0;
                img.at(x, y, 1) = p[1] / 255.0;
                img.at(x, y, 2) = p[0] / 255.0;
                img.at(x, y, 3) = channels == 4 ? p[3] / 255.0 : 1.0;
            }
        }
    }
    return img;
}

TextureImage load_texture_file(const std::filesystem::path &path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png") {
        return read_png(path);
    }
    if (ext == ".tga") {
        std::ifstream f(path, std::ios::binary);
        if (!f) {
            throw IoError("cannot open texture '" + path.string() + "'");
        }
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), {});
        return decode_tga(bytes);
    }
    throw IoError("unsupported texture format '" + path.string() + "' (PNG and TGA only)");
}

std::array<double, 4> sample_texture(const TextureImage &tex, double u, double v) {
    const int w = tex.width();
    const int h = tex.height();
    const double x = (u - std::floor(u)) * w - 0.5;
    const double y = (1.0 - (v - std::floor(v))) * h - 0.5;
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const double tx = x - fx;
    const double ty = y - fy;
    const auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
    const int x0 = wrap(static_cast<int>(fx), w);
    const int x1 = wrap(static_cast<int>(fx) + 1, w);
    const int y0 = wrap(static_cast<int>(fy), h);
    const int y1 = wrap(static_cast<int>(fy) + 1, h);
    std::array<double, 4> out{};
    for (int c = 0; c < 4; ++c) {
        const double top = (1.0 - tx) * tex.at(x0, y0, c) + tx * tex.at(x1, y0, c);
        const double bottom = (1.0 - tx) * tex.at(x0, y1, c) + tx * tex.at(x1, y1, c);
        out[static_cast<std::size_t>(c)] = (1.0 - ty) * top + ty * bottom;
    }
    return out;
}

} // namespace orbitalsplat

// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "orbitalsplat/geometry.hpp"
#include "orbitalsplat/image.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <istream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace orbitalsplat {

using TextureImage = ImageRGBA;

/// One triangle corner: vertex index plus optional uv / normal indices (-1 when absent).
struct Corner {
    int v = -1;
    int vt = -1;
    int vn = -1;

    bool operator==(const Corner &) const = default;
};

struct Triangle {
    std::array<Corner, 3> corners;
    /// Index into the material list, -1 when none was assigned.
    int material = -1;
    /// Source polygon this triangle came from (fan triangulation keeps them grouped).
    int face = -1;
};

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Vec3> normals;
    std::vector<Vec2> uvs;
    std::vector<Triangle> triangles;

    bool empty() const { return vertices.empty() || triangles.empty(); }
    Vec3 face_normal(std::size_t tri) const;
    double triangle_area(std::size_t tri) const;
    /// Throws InvalidArgument when an index is out of range.
    void validate() const;
};

struct Material {
    std::string name;
    Vec3 diffuse_rgb{0.7, 0.7, 0.7};
    std::shared_ptr<const TextureImage> diffuse_texture;
    std::string texture_path;
};

inline const Vec3 kFallbackGray{0.7, 0.7, 0.7};

/// Supplies MTL text and decoded textures referenced by an OBJ.
struct MaterialResolver {
    std::function<std::optional<std::string>(const std::string &mtllib)> read_text;
    std::function<std::shared_ptr<const TextureImage>(const std::string &path)> load_texture;
};

/// Resolves `mtllib` and `map_Kd` paths relative to `base_dir`.
MaterialResolver filesystem_resolver(const std::filesystem::path &base_dir);

struct ObjParseResult {
    Mesh mesh;
    std::vector<Material> materials;
    std::size_t unknown_directives = 0;
    std::vector<std::string> warnings;
};

ObjParseResult parse_obj(std::istream &in, const MaterialResolver &resolver = {});
ObjParseResult load_obj(const std::filesystem::path &path);

/// Parses MTL text; unreadable textures become warnings and the material keeps its diffuse color.
std::vector<Material> parse_mtl(std::istream &in, const MaterialResolver &resolver,
                                std::vector<std::string> &warnings);

struct NormalizedMesh {
    Mesh mesh;
    Vec3 center;
    double scale;
};

/// Recenters on the bounding-box center and scales so the farthest vertex has norm 1.
/// Triangles whose area falls to 1e-12 or below are dropped.
NormalizedMesh normalize_to_unit_sphere(const Mesh &mesh);

/// Area-weighted vertex normals. Triangles from the same source polygon count as one face.
Mesh compute_vertex_normals(const Mesh &mesh);

/// Writes `.obj` with 9 significant digits. When `mtl_name` is set a `mtllib` line and
/// `usemtl` switches are emitted.
void write_obj(std::ostream &out, const Mesh &mesh, const std::vector<Material> &materials = {},
               const std::string &mtl_name = {});
void write_mtl(std::ostream &out, const std::vector<Material> &materials);
/// Writes `<stem>.obj`, `<stem>.mtl` and referenced PNG textures into `dir`.
void save_obj(const std::filesystem::path &dir, const std::string &stem, const Mesh &mesh,
              const std::vector<Material> &materials);

/// PNG or uncompressed / RLE TGA.
TextureImage load_texture_file(const std::filesystem::path &path);
TextureImage decode_tga(std::span<const std::uint8_t> bytes);

/// Bilinear lookup with repeat wrapping; v = 0 is the bottom row (OBJ convention).
std::array<double, 4> sample_texture(const TextureImage &tex, double u, double v);

} // namespace orbitalsplat

#pragma once

// Molecular data: extended XYZ I/O, unit conversion, radius graphs, dataset
// statistics, batching and the binary dataset cache.
//
// Edge convention: the edge (i -> j) carries r_ij = p_j - p_i and its message
// is aggregated at the center i. Every graph also works as a batch: nodes are
// tagged with their molecule and molecules occupy contiguous node ranges.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pace/irreps.hpp"

namespace pace {

struct Structure {
    std::vector<int> species;  // atomic numbers
    std::vector<Vec3> positions;  // Å
    std::optional<double> energy;  // eV
    std::optional<std::vector<Vec3>> forces;  // eV/Å
    std::size_t size() const { return species.size(); }
};

/// Atomic number for a symbol; 0 when unknown.
int atomic_number(std::string_view symbol);
/// Throws DataError for Z outside 1..118.
std::string element_symbol(int z);
/// Standard atomic weight in amu; DataError when not tabulated.
double atomic_mass(int z);

/// Frames of "N / comment with key=value pairs / symbol x y z [fx fy fz]".
/// Throws ParseError carrying the 1-based line number.
std::vector<Structure> parse_extended_xyz(std::string_view text, const std::string& energy_key = "energy");
std::vector<Structure> read_extended_xyz(const std::filesystem::path& path, const std::string& energy_key = "energy");
std::string serialize_extended_xyz(std::span<const Structure> frames, const std::string& energy_key = "energy");
void write_extended_xyz(const std::filesystem::path& path, std::span<const Structure> frames,
                        const std::string& energy_key = "energy");

inline constexpr double kKcalPerMolToEv = 0.0433641;
/// kcal/mol -> eV (and kcal/mol/Å -> eV/Å).
inline double convert_units(double kcal) { return kcal * kKcalPerMolToEv; }
/// Converts energy and forces of a structure in place.
void convert_units(Structure& s);

struct Edge {
    int center = 0;
    int neighbor = 0;
    Vec3 direction{};  // unit vector along p_neighbor - p_center
    double distance = 0;  // Å
};

struct MolecularGraph {
    std::vector<int> atomic_numbers;
    std::vector<int> species;  // index into the alphabet
    int n_species = 0;
    std::vector<Edge> edges;  // sorted by (center, neighbor)
    std::vector<int> node_molecule;
    std::vector<std::size_t> molecule_offsets{0};  // n_molecules + 1 node offsets
    std::vector<std::size_t> edge_offsets{0};  // per molecule, into edges

    std::size_t n_nodes() const { return species.size(); }
    std::size_t n_molecules() const { return molecule_offsets.size() - 1; }
    /// Row-major n_nodes x n_species.
    std::vector<double> one_hot() const;
    std::vector<int> neighbor_counts() const;
};

/// Alphabet-index of each atom; DataError for species outside the alphabet.
std::vector<int> species_indices(const Structure& s, std::span<const int> alphabet);
/// Sorted distinct atomic numbers over the structures.
std::vector<int> species_alphabet(std::span<const Structure> structures);

/// All ordered pairs with 0 < r <= cutoff. DataError on coincident atoms or a
/// species missing from the alphabet; ConfigError when cutoff <= 0.
MolecularGraph build_graph(const Structure& s, double cutoff, std::span<const int> alphabet);
MolecularGraph build_graph(const Structure& s, double cutoff);

/// Concatenates graphs, shifting node indices.
MolecularGraph batch(std::span<const MolecularGraph> graphs);

struct DatasetStats {
    double mean_energy = 0;  // eV
    double energy_per_atom = 0;  // eV, sum E / sum N
    double force_std = 1;  // eV/Å, population std over all components
    double avg_neighbors = 0;
    bool operator==(const DatasetStats&) const = default;
};

/// ConfigError when empty, DataError when labels are missing.
DatasetStats compute_stats(std::span<const Structure> training, std::span<const MolecularGraph> graphs);

/// Binary cache: "PACEDATA", u32 version, u64 count, then frames.
void save_dataset_cache(const std::filesystem::path& path, std::span<const Structure> frames);
std::vector<Structure> load_dataset_cache(const std::filesystem::path& path);

}  // namespace pace

#ifndef CMSR_DEFORM_HPP
#define CMSR_DEFORM_HPP

#include "cmsr/image_io.hpp"
#include "cmsr/tensor.hpp"

#include <memory>
#include <vector>

namespace cmsr {

// Uniform lattice of normalized (x,y) pixel-center coordinates spanning
// [-1,1]: x_j = (2j+1)/w - 1. Shape (1,2,h,w), channel 0 = x.
Tensor identity_grid(int h, int w);

// 2x3 matrix [a b tx; c d ty] acting on normalized coordinates,
// identity-initialized. Learnable (requires_grad).
struct AffineParams {
  Tensor theta; // (1,1,2,3)
  static AffineParams identity();
};

// Maps every grid point through the affine matrix. Differentiable in both
// the parameters and the grid.
Tensor affine_warp_grid(const AffineParams &p, const Tensor &grid);

// Continuous piecewise-affine velocity field over an nx x ny tessellation
// of [-1,1]^2, each cell split into 4 triangles by its diagonals. The
// learnable coefficients live in the continuity-constrained basis: any
// coefficient vector reconstructs a velocity field that is continuous
// across every shared triangle edge. The warp integrates grid points along
// the field with n_steps fixed Euler steps.
class CpabField {
public:
  CpabField(int nx, int ny, int n_steps);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int n_steps() const { return n_steps_; }
  int n_triangles() const { return nx_ * ny_ * 4; }
  int dim() const { return dim_; } // D, number of basis coefficients

  Tensor &coeffs() { return coeffs_; }
  const Tensor &coeffs() const { return coeffs_; }

  // Orthonormal null-space basis of the edge-continuity constraints,
  // row-major (6*n_triangles) x dim. Row layout per triangle:
  // [a11 a12 a13 a21 a22 a23] with v = A [x y 1]^T.
  const std::vector<float> &basis() const { return *basis_; }

  // Per-triangle velocity matrices for the current (or given) coefficients.
  std::vector<float> velocity_matrices() const;
  std::vector<float> velocity_matrices(const float *coeffs) const;

  // Projects a desired 6*n_triangles field onto the basis. Exact whenever
  // the field already satisfies the continuity constraints.
  std::vector<float> coeffs_for_field(const std::vector<float> &field) const;

  // Triangle containing (x,y); positions outside the domain use the nearest
  // boundary cell's triangles, extending the field affinely.
  int locate(float x, float y) const;

  // Velocity at a point under matrices A (from velocity_matrices).
  void velocity_at(const std::vector<float> &A, float x, float y, float &vx,
                   float &vy) const;

private:
  int nx_ = 0, ny_ = 0, n_steps_ = 0, dim_ = 0;
  Tensor coeffs_; // (1,1,1,dim)
  std::shared_ptr<const std::vector<float>> basis_;
};

Tensor cpab_warp_grid(const CpabField &f, const Tensor &grid);

// Thin-plate spline displacement surface tied to a K x K lattice of control
// points over [-1,1]^2 (endpoints included), radial basis U(r) = r^2 log r^2.
// Zero displacements give the identity; with lambda = 0 the surface
// interpolates the control displacements exactly.
struct TpsParams {
  int k = 5;
  float lambda = 0.0f;
  Tensor displacements; // (1,1,K*K,2), row-major lattice, (dx,dy) per point
  std::vector<float> control_x, control_y;

  static TpsParams lattice(int k, float lambda = 0.0f);
};

Tensor tps_warp_grid(const TpsParams &t, const Tensor &grid);

// The learnable coarse-to-fine alignment stack. Composition order is part
// of the contract: affine first, then CPAB, then TPS, all applied to the
// sampling grid; the image is resampled exactly once.
struct DeformationStack {
  AffineParams affine;
  CpabField cpab;
  TpsParams tps;
  bool affine_enabled = true;
  bool cpab_enabled = true;
  bool tps_enabled = true;

  DeformationStack(int cpab_cells_x = 4, int cpab_cells_y = 4,
                   int cpab_steps = 32, int tps_k = 5, float tps_lambda = 0.0f);

  std::vector<Tensor> enabled_parameters() const;
};

// Composed sampling grid for an h x w output.
Tensor deformation_grid(const DeformationStack &stack, int h, int w);

// Warps the RGB guide toward the target modality: one grid_sample of `rgb`
// over the composed grid. Gradients flow to all enabled parameter sets.
Tensor apply_deformation(const DeformationStack &stack, const Tensor &rgb);

// Alignment visualization: warped-guide red channel against the modality
// (bicubic-upsampled to the guide size) in green.
ImageBuffer rg_overlay(const Tensor &warped_guide, const Tensor &modality);

} // namespace cmsr

#endif

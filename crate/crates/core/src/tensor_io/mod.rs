//! On-disk formats: CGF1 tensors, COLMAP text models and PLY/OBJ meshes.

pub mod cgf;
pub mod colmap;
pub mod mesh;

pub use cgf::{read_tensor, write_tensor, TensorFile};
pub use colmap::{parse_colmap, write_colmap, ColmapCamera, ColmapImage, ColmapModel, ColmapPoint};
pub use mesh::{read_mesh, write_mesh, MeshData, MeshFormat};

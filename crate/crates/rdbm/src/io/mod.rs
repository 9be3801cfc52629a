//! File formats: binary tensor files, netpbm images, CSV tables and SVG
//! line plots. All writers are deterministic byte for byte.

mod netpbm;
mod svg;
mod table;
mod tensor_file;

pub use netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
pub use svg::{write_svg_lines, SvgSeries};
pub use table::{format_g17, write_csv};
pub use tensor_file::{read_tensor, write_tensor};

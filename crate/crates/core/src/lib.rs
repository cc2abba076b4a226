pub mod cfd;
pub mod config;
pub mod continual;
pub mod error;
pub mod interchange;
pub mod micronet;
pub mod pda;
pub mod report;
pub mod shapeworld;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/occlusion.md")]
    mod occlusion {}
    #[doc = include_str!("../../../book/src/dissection.md")]
    mod dissection {}
    #[doc = include_str!("../../../book/src/freezing.md")]
    mod freezing {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod control;
pub mod diffusion;
pub mod fsutil;
pub mod geomorph;
pub mod latent;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod seeding;
pub mod synthterra;
pub mod training;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/rasters.md")]
    mod rasters {}
    #[doc = include_str!("../../../book/src/sketches.md")]
    mod sketches {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/autoencoders.md")]
    mod autoencoders {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/conditioning.md")]
    mod conditioning {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}

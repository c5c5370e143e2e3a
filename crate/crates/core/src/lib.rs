pub mod attack;
pub mod corpus;
pub mod dp_rag;
pub mod epsilon;
pub mod error;
pub mod generator;
pub mod ledger;
pub mod mechanisms;
pub mod metrics;
pub mod noise;
pub mod orchestrators;
pub mod workload;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/budgets.md")]
    mod budgets {}
    #[doc = include_str!("../../../book/src/mechanisms.md")]
    mod mechanisms {}
    #[doc = include_str!("../../../book/src/dp_rag.md")]
    mod dp_rag {}
    #[doc = include_str!("../../../book/src/multi_query.md")]
    mod multi_query {}
    #[doc = include_str!("../../../book/src/workloads.md")]
    mod workloads {}
    #[doc = include_str!("../../../book/src/attack.md")]
    mod attack {}
}

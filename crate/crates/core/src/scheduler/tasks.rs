use crate::tile::{lower_indices, TileIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// SYRK updates, then POTRF.
    Diagonal,
    /// GEMM updates, then TRSM.
    OffDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskDescriptor {
    pub target: TileIndex,
    pub kind: TaskKind,
    /// Rank in the enumeration.
    pub position: usize,
    pub owner_stream: usize,
}

/// Column-major lower-triangle task order with cyclic stream ownership.
pub fn enumerate_tasks(nt: usize, total_streams: usize) -> Vec<TaskDescriptor> {
    assert!(total_streams >= 1, "need at least one stream");
    lower_indices(nt)
        .enumerate()
        .map(|(position, target)| TaskDescriptor {
            target,
            kind: if target.is_diagonal() { TaskKind::Diagonal } else { TaskKind::OffDiagonal },
            position,
            owner_stream: position % total_streams,
        })
        .collect()
}

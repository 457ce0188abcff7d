use std::sync::{Arc, RwLock};

use crate::tile::{lower_indices, packed_index, TileBuffer, TileIndex, TiledSymmetricMatrix};

/// Host tile store shared between workers. Each tile has a single writer;
/// readers only look at a tile once its producer has published it.
#[derive(Debug)]
pub struct HostTiles {
    n: usize,
    nb: usize,
    nt: usize,
    tiles: Vec<RwLock<Arc<TileBuffer>>>,
}

impl HostTiles {
    pub fn from_matrix(a: TiledSymmetricMatrix) -> Self {
        let (n, nb, nt) = (a.n(), a.nb(), a.nt());
        let tiles = a.into_tiles().into_iter().map(|t| RwLock::new(Arc::new(t))).collect();
        HostTiles { n, nb, nt, tiles }
    }

    pub fn into_matrix(self) -> TiledSymmetricMatrix {
        let tiles = self
            .tiles
            .into_iter()
            .map(|t| Arc::unwrap_or_clone(t.into_inner().expect("host tile lock poisoned")))
            .collect();
        TiledSymmetricMatrix::from_tiles(self.n, self.nb, tiles).expect("host store keeps the tile layout")
    }

    /// Deep copy of the current contents.
    pub fn snapshot(&self) -> TiledSymmetricMatrix {
        let tiles = lower_indices(self.nt).map(|idx| (*self.read(idx)).clone()).collect();
        TiledSymmetricMatrix::from_tiles(self.n, self.nb, tiles).expect("host store keeps the tile layout")
    }

    pub fn nb(&self) -> usize {
        self.nb
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn read(&self, idx: TileIndex) -> Arc<TileBuffer> {
        self.tiles[packed_index(self.nt, idx)].read().expect("host tile lock poisoned").clone()
    }

    pub fn write(&self, idx: TileIndex, tile: Arc<TileBuffer>) {
        *self.tiles[packed_index(self.nt, idx)].write().expect("host tile lock poisoned") = tile;
    }
}

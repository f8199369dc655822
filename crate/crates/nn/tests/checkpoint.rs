use proptest::prelude::*;
use shiftgate_nn::{checkpoint, Network};

fn sample_net(seed: u64) -> Network {
    Network::builder(seed)
        .conv2d(1, 4, 4, 2, 1)
        .relu()
        .conv_transpose2d(4, 2, 4, 2, 1)
        .sigmoid()
        .flatten()
        .dense(128, 6)
        .reshape(vec![2, 3])
        .build()
        .unwrap()
}

#[test]
fn header_layout() {
    let bytes = checkpoint::to_bytes(&sample_net(1)).unwrap();
    assert_eq!(&bytes[..5], b"SGNN1");
    assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 7);
    assert_eq!(bytes[9], 2, "first layer is conv2d");
    assert_eq!(&bytes[bytes.len() - 8..], &1u64.to_le_bytes());
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.sgnn");
    let net = sample_net(3);
    checkpoint::write(&net, std::fs::File::create(&path).unwrap()).unwrap();
    let back = checkpoint::read(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, net);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = checkpoint::to_bytes(&sample_net(4)).unwrap();
    assert!(checkpoint::read(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::read(&bad[..]).is_err());
    let mut extra = bytes;
    extra.push(0);
    assert!(checkpoint::read(&extra[..]).is_err());
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>(), scale in -1e6f64..1e6) {
        let mut net = sample_net(seed);
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v *= scale;
            }
        }
        let bytes = checkpoint::to_bytes(&net).unwrap();
        let (back, used) = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(checkpoint::to_bytes(&back).unwrap(), bytes);
        prop_assert_eq!(back, net);
    }
}

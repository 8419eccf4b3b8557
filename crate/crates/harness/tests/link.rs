use std::time::Duration;

use tokio::net::TcpListener;
use trustgate_core::ledger::LinkProfile;
use trustgate_harness::endpoint::{run_server, ServerConfig};
use trustgate_harness::link::spawn_link;
use trustgate_harness::{handshake, ClientConfig, Identity, Outcome};

// HEL/ACK, GetEndpoints, OPN, CreateSession and ActivateSession: five round trips.
const ROUND_TRIPS: u32 = 5;

async fn setup(one_way: Duration) -> (trustgate_harness::endpoint::ServerHandle, trustgate_harness::link::LinkHandle, ClientConfig) {
    let server = Identity::generate("server", [1; 32]).unwrap();
    let client = Identity::generate("client", [2; 32]).unwrap();
    let srv = run_server(TcpListener::bind("127.0.0.1:0").await.unwrap(), ServerConfig::new(server)).unwrap();
    let link = spawn_link(
        TcpListener::bind("127.0.0.1:0").await.unwrap(),
        srv.local_addr(),
        LinkProfile::new(one_way, 0.0),
        9,
    )
    .unwrap();
    (srv, link, ClientConfig::new(client).with_timeout(Duration::from_secs(5)))
}

#[tokio::test]
async fn fifty_ms_link_bounds_the_handshake_from_below() {
    let (_srv, link, client) = setup(Duration::from_millis(50)).await;
    let r = handshake(link.local_addr(), &client).await;
    assert_eq!(r.outcome, Outcome::Established);
    assert!(r.duration_ms >= 4.0 * 100.0, "{r:?}");
    assert!(r.duration_ms >= f64::from(ROUND_TRIPS) * 100.0, "{r:?}");
}

#[tokio::test]
async fn zero_delay_link_matches_a_direct_connection() {
    let (srv, link, client) = setup(Duration::ZERO).await;
    let mut direct = Vec::new();
    let mut linked = Vec::new();
    for _ in 0..20 {
        direct.push(handshake(srv.local_addr(), &client).await.duration_ms);
        linked.push(handshake(link.local_addr(), &client).await.duration_ms);
    }
    direct.sort_by(f64::total_cmp);
    linked.sort_by(f64::total_cmp);
    // Medians within scheduler noise.
    assert!(linked[10] < direct[10] + 20.0, "direct {direct:?} linked {linked:?}");
}

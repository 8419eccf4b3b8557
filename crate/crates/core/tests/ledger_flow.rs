use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;
use trustgate_core::cert::hash_thumbprint;
use trustgate_core::controller::{spawn_controller, ControllerConfig, LedgerSource};
use trustgate_core::dataplane::ThumbprintTable;
use trustgate_core::ledger::{
    wire, AdminKey, AdminKeyring, CertificateAction, ContractCall, Layer, LedgerClient, LedgerNode, NodeConfig,
    WireError, DEFAULT_TAG,
};
use trustgate_core::time::Timestamp;

async fn until(table: &ThumbprintTable, f: impl Fn(&ThumbprintTable) -> bool) {
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while !f(table) {
        assert!(tokio::time::Instant::now() < deadline, "table never reached the expected state");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

fn later() -> Timestamp {
    Timestamp::now() + Duration::from_secs(600)
}

#[tokio::test]
async fn l1_issue_and_revoke_reach_a_remote_controller() {
    let admin = AdminKey::from_seed([1; 32]);
    let keyring = AdminKeyring::new([admin.public()]);
    let node = LedgerNode::start(NodeConfig::default(), keyring.clone());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let _server = wire::serve(listener, node.clone());

    let table = Arc::new(ThumbprintTable::new(8));
    let _c = spawn_controller(table.clone(), keyring, LedgerSource::Remote(addr), ControllerConfig::default());
    let cert = b"remote-cert".to_vec();
    let tp = hash_thumbprint(&cert).unwrap();

    let mut client = LedgerClient::connect(addr).await.unwrap();
    let (a, b) = client.tips().await.unwrap();
    let tx = trustgate_core::ledger::LedgerTransaction::new(
        &admin,
        DEFAULT_TAG,
        CertificateAction::issue(cert.clone(), later()).encode().unwrap(),
        vec![a, b],
        Timestamp::now(),
    )
    .unwrap();
    client.submit_l1(tx).await.unwrap();
    until(&table, |t| t.lookup(&tp)).await;

    node.submit_action(&admin, DEFAULT_TAG, &CertificateAction::revoke(cert)).unwrap();
    until(&table, |t| !t.lookup(&tp)).await;
}

#[tokio::test]
async fn l2_calls_are_checked_by_the_registry() {
    let admin = AdminKey::from_seed([1; 32]);
    let intruder = AdminKey::from_seed([2; 32]);
    let keyring = AdminKeyring::new([admin.public()]);
    let node = LedgerNode::start(NodeConfig { filler_rate: 0.0, ..NodeConfig::default() }, keyring.clone());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let _server = wire::serve(listener, node.clone());
    let table = Arc::new(ThumbprintTable::new(8));
    let config = ControllerConfig {
        layer: Layer::L2,
        ..ControllerConfig::default()
    };
    let _c = spawn_controller(table.clone(), keyring, LedgerSource::Local(node.clone()), config);

    let cert = b"l2-cert".to_vec();
    let tp = hash_thumbprint(&cert).unwrap();
    let mut client = LedgerClient::connect(addr).await.unwrap();
    let denied = client
        .call_l2(ContractCall::new(&intruder, &CertificateAction::issue(cert.clone(), later()), 1).unwrap())
        .await;
    assert!(matches!(denied, Err(WireError::Unauthorized)));
    assert!(node.get_all_certificates().is_empty());

    let ev = client
        .call_l2(ContractCall::new(&admin, &CertificateAction::issue(cert.clone(), later()), 2).unwrap())
        .await
        .unwrap();
    assert!(!ev.noop);
    until(&table, |t| t.lookup(&tp)).await;
    let again = client
        .call_l2(ContractCall::new(&admin, &CertificateAction::revoke(cert.clone()), 3).unwrap())
        .await
        .unwrap();
    assert!(!again.noop);
    until(&table, |t| t.is_empty()).await;
    assert_eq!(table.len(), 0);
}

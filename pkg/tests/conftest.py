import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from uivtsp.authority import AuthoritySettings, TrustedAuthority
from uivtsp.core import (
    CLOCK_START_MS,
    LogicalClock,
    MacAddress,
    SimulationRandom,
    SwId,
    VulnerabilityMeta,
)
from uivtsp.database import Base, get_db
from uivtsp.main import app, get_authority
from uivtsp.tokens import VulnerabilityDocument

MAC_A = MacAddress.parse("02:00:00:00:00:0a")
MAC_B = MacAddress.parse("02:00:00:00:00:0b")
MAC_C = MacAddress.parse("02:00:00:00:00:0c")


@pytest.fixture()
def rng():
    return SimulationRandom(7)


@pytest.fixture()
def clock():
    return LogicalClock()


@pytest.fixture()
def meta():
    return VulnerabilityMeta(
        vul_id="uiv-0001",
        vendor="acme",
        device_class="plc",
        severity=8,
        reported_at=CLOCK_START_MS,
    )


@pytest.fixture()
def doc(meta):
    return VulnerabilityDocument(meta, b"stack overflow in the modbus parser " * 8)


def make_authority(rng, clock, **settings) -> TrustedAuthority:
    return TrustedAuthority(AuthoritySettings(**settings), rng=rng, clock=clock)


@pytest.fixture()
def authority(rng, clock, doc):
    """Authority with workers alice (MAC_A) and bob (MAC_B), both listed for uiv-0001."""
    ta = make_authority(rng, clock)
    ta.register_worker(SwId("alice"), MAC_A)
    ta.register_worker(SwId("bob"), MAC_B)
    ta.submit_vulnerability(doc, SwId("alice"))
    ta.set_access_list("uiv-0001", [SwId("alice"), SwId("bob")])
    return ta


# ---------------------------------------------------------------------------
# HTTP service
# ---------------------------------------------------------------------------


@pytest.fixture()
def db_session():
    engine = create_engine(
        "sqlite://",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    Base.metadata.create_all(engine)
    Session = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    session = Session()
    yield session
    session.close()
    Base.metadata.drop_all(engine)


@pytest.fixture()
def client(db_session):
    service_authority = TrustedAuthority(
        AuthoritySettings(trap_window_ms=60_000), rng=SimulationRandom(11), clock=LogicalClock()
    )

    def override_db():
        yield db_session

    app.dependency_overrides[get_db] = override_db
    app.dependency_overrides[get_authority] = lambda: service_authority
    yield TestClient(app)
    app.dependency_overrides.clear()

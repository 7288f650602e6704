import sys
from riskconv import cli

sys.exit(cli.main())
